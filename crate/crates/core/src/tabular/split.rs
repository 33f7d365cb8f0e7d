use super::{Dataset, MaskMatrix};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Row indices of each partition, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded partition of row indices.
///
/// Row-level: `floor(n * train_fraction)` shuffled rows go to train.
/// Patient-level: patients (in order of first appearance) are shuffled and
/// `floor(n_patients * train_fraction)` of them go to train with all their rows.
pub fn split_indices(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
    by_patient: bool,
) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = RngStream::new(seed);
    let n = dataset.n_rows();
    let mut in_train = vec![false; n];

    if by_patient {
        let pid_col = dataset.patient_col().ok_or_else(|| {
            Error::Schema("patient-level split requested but no patient id column".into())
        })?;
        let mut patients: Vec<u64> = Vec::new();
        let mut row_patient = Vec::with_capacity(n);
        for i in 0..n {
            let id = dataset.get(i, pid_col).to_bits();
            let slot = match patients.iter().position(|&p| p == id) {
                Some(s) => s,
                None => {
                    patients.push(id);
                    patients.len() - 1
                }
            };
            row_patient.push(slot);
        }
        let mut order: Vec<usize> = (0..patients.len()).collect();
        rng.shuffle(&mut order);
        let n_train = (patients.len() as f64 * train_fraction).floor() as usize;
        let mut patient_in_train = vec![false; patients.len()];
        for &p in &order[..n_train] {
            patient_in_train[p] = true;
        }
        for i in 0..n {
            in_train[i] = patient_in_train[row_patient[i]];
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let n_train = (n as f64 * train_fraction).floor() as usize;
        for &i in &order[..n_train] {
            in_train[i] = true;
        }
    }

    let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_train[i]);
    Ok(SplitIndices { train, test })
}

#[allow(clippy::type_complexity)]
pub fn split_train_test(
    dataset: &Dataset,
    mask: &MaskMatrix,
    train_fraction: f64,
    seed: u64,
    by_patient: bool,
) -> Result<((Dataset, MaskMatrix), (Dataset, MaskMatrix))> {
    if mask.shape() != dataset.values().dim() {
        return Err(Error::Shape("mask and dataset shapes differ".into()));
    }
    let idx = split_indices(dataset, train_fraction, seed, by_patient)?;
    Ok((
        (dataset.select_rows(&idx.train), mask.select_rows(&idx.train)),
        (dataset.select_rows(&idx.test), mask.select_rows(&idx.test)),
    ))
}
