//! Multivariate imputation by chained equations, with type-0 predictive mean
//! matching as the per-column model.
//!
//! Missing cells start at the column mean (continuous) or mode (binary and
//! categorical). Each cycle then visits the incomplete columns in schema
//! order, regresses the observed cells on every other column's current
//! values, and replaces the missing cells with the observed value of a donor
//! drawn from the `k` rows whose predictions are closest.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tabular::{ColumnKind, ColumnRole, Dataset, MaskMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiceConfig {
    pub n_cycles: usize,
    pub k_donors: usize,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for MiceConfig {
    fn default() -> Self {
        Self {
            n_cycles: 5,
            k_donors: 5,
            ridge: 1e-6,
            seed: 0,
        }
    }
}

impl MiceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cycles < 1 {
            return Err(Error::Config("MICE needs at least one cycle".into()));
        }
        if self.k_donors < 1 {
            return Err(Error::Config("PMM needs at least one donor".into()));
        }
        if self.ridge.is_nan() || self.ridge < 0.0 {
            return Err(Error::Config("ridge must be non-negative".into()));
        }
        Ok(())
    }
}

/// Least squares with an intercept: solves `(A^T A + ridge D) b = A^T y`
/// where `A = [1 | X]` and `D` is the identity with the intercept entry
/// zeroed. Returns `[intercept, slopes...]`.
pub fn ols_fit(x: ArrayView2<f64>, y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let (n, p) = x.dim();
    if n == 0 || n != y.len() {
        return Err(Error::Shape(format!("{n} design rows vs {} responses", y.len())));
    }
    let q = p + 1;
    let mut gram = DMatrix::<f64>::zeros(q, q);
    let mut rhs = DVector::<f64>::zeros(q);
    let mut row = vec![0.0; q];
    for i in 0..n {
        row[0] = 1.0;
        for j in 0..p {
            row[j + 1] = x[[i, j]];
        }
        for a in 0..q {
            rhs[a] += row[a] * y[i];
            for b in 0..=a {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
        if a > 0 {
            gram[(a, a)] += ridge;
        }
    }
    let beta = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Numerical(format!("least squares solve failed: {e}")))?,
    };
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numerical("non-finite regression coefficients".into()));
    }
    Ok(beta.iter().copied().collect())
}

fn predict(x: ArrayView2<f64>, beta: &[f64]) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|r| beta[0] + r.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Indices of the `k` observed predictions closest to `target`, ordered by
/// `(distance, index)`.
pub fn donor_pool(pred_obs: &[f64], target: f64, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pred_obs.len()).collect();
    let key = |i: usize| ((pred_obs[i] - target).abs(), i);
    let cmp = |a: &usize, b: &usize| {
        let (da, ia) = key(*a);
        let (db, ib) = key(*b);
        da.total_cmp(&db).then(ia.cmp(&ib))
    };
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// Predictive mean matching for one column. Every returned value is one of
/// `y_obs`.
pub fn pmm_impute_column(
    y_obs: &[f64],
    x_obs: ArrayView2<f64>,
    x_mis: ArrayView2<f64>,
    k: usize,
    ridge: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("PMM needs at least one donor".into()));
    }
    if y_obs.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} observed values for {k} donors",
            y_obs.len()
        )));
    }
    if x_obs.ncols() != x_mis.ncols() {
        return Err(Error::Shape("observed and missing design widths differ".into()));
    }
    let beta = ols_fit(x_obs, y_obs, ridge)?;
    let pred_obs = predict(x_obs, &beta);
    let pred_mis = predict(x_mis, &beta);
    Ok(pred_mis
        .iter()
        .map(|&target| {
            let pool = donor_pool(&pred_obs, target, k);
            y_obs[pool[rng.index(pool.len())]]
        })
        .collect())
}

fn placeholder(values: &Array2<f64>, mask: &MaskMatrix, col: usize, kind: ColumnKind) -> f64 {
    let observed: Vec<f64> = (0..values.nrows())
        .filter(|&i| !mask.is_missing(i, col))
        .map(|i| values[[i, col]])
        .collect();
    match kind {
        ColumnKind::Continuous => observed.iter().sum::<f64>() / observed.len() as f64,
        ColumnKind::Binary => {
            let ones = observed.iter().filter(|&&v| v == 1.0).count();
            // ties go to 0
            if 2 * ones > observed.len() {
                1.0
            } else {
                0.0
            }
        }
        ColumnKind::Categorical(c) => {
            let mut counts = vec![0usize; c];
            for &v in &observed {
                counts[v as usize] += 1;
            }
            let mut best = 0;
            for (k, &n) in counts.iter().enumerate() {
                if n > counts[best] {
                    best = k;
                }
            }
            best as f64
        }
    }
}

/// Single chained-equation imputation. Observed cells are never modified.
pub fn mice_impute(data: &Dataset, mask: &MaskMatrix, cfg: &MiceConfig) -> Result<Dataset> {
    cfg.validate()?;
    if mask.shape() != data.values().dim() {
        return Err(Error::Shape("mask and dataset shapes differ".into()));
    }
    let schema = data.schema();
    let n = data.n_rows();
    let usable: Vec<usize> = (0..schema.len())
        .filter(|&j| schema[j].role != ColumnRole::PatientId)
        .collect();
    let incomplete: Vec<usize> = usable
        .iter()
        .copied()
        .filter(|&j| mask.column_missing_count(j) > 0)
        .collect();
    if let Some(pid) = data.patient_col() {
        if mask.column_missing_count(pid) > 0 {
            return Err(Error::InsufficientData("patient id column has missing cells".into()));
        }
    }
    if incomplete.is_empty() {
        return Ok(data.clone());
    }
    for &j in &incomplete {
        let observed = n - mask.column_missing_count(j);
        if observed == 0 {
            return Err(Error::InsufficientData(format!("column '{}' is entirely missing", schema[j].name)));
        }
        if observed < cfg.k_donors {
            return Err(Error::InsufficientData(format!(
                "column '{}' has {observed} observed cells for {} donors",
                schema[j].name, cfg.k_donors
            )));
        }
    }
    if usable.len() == incomplete.len() {
        return Err(Error::InsufficientData("no fully observed predictor column".into()));
    }

    let mut values = data.values().clone();
    for &j in &incomplete {
        let fill = placeholder(&values, mask, j, schema[j].kind);
        for i in 0..n {
            if mask.is_missing(i, j) {
                values[[i, j]] = fill;
            }
        }
    }

    let mut rng = RngStream::new(cfg.seed);
    for _cycle in 0..cfg.n_cycles {
        for &target in &incomplete {
            let predictors: Vec<usize> = usable.iter().copied().filter(|&j| j != target).collect();
            let (obs_rows, mis_rows): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| !mask.is_missing(i, target));
            let design = |rows: &[usize]| {
                Array2::from_shape_fn((rows.len(), predictors.len()), |(r, c)| values[[rows[r], predictors[c]]])
            };
            let x_obs = design(&obs_rows);
            let x_mis = design(&mis_rows);
            let y_obs: Vec<f64> = obs_rows.iter().map(|&i| values[[i, target]]).collect();
            let imputed = pmm_impute_column(&y_obs, x_obs.view(), x_mis.view(), cfg.k_donors, cfg.ridge, &mut rng)?;
            for (&i, v) in mis_rows.iter().zip(imputed) {
                values[[i, target]] = v;
            }
        }
    }
    Dataset::new(schema.to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::missingness::{induce_loss, LossSpec};
    use crate::simulate::Preset;
    use crate::tabular::{ColumnSpec};
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn exact_line() {
        let x = array![[0.0], [1.0], [2.0], [3.0], [4.0]];
        let y: Vec<f64> = (0..5).map(|i| 3.0 * i as f64 + 1.0).collect();
        let b = ols_fit(x.view(), &y, 1e-10).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-6 && (b[1] - 3.0).abs() < 1e-6, "{b:?}");
    }

    #[test]
    fn zero_design_gives_mean() {
        let x = Array2::zeros((6, 2));
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 9.0];
        let b = ols_fit(x.view(), &y, 1e-6).unwrap();
        assert!((b[0] - 4.0).abs() < 1e-9);
        assert_eq!(&b[1..], &[0.0, 0.0]);
    }

    #[test]
    fn duplicated_column_stays_finite() {
        let x = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [5.0, 5.0]];
        let b = ols_fit(x.view(), &[2.0, 4.1, 5.9, 10.0], 1e-6).unwrap();
        assert!(b.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn hand_enumerated_pool() {
        // predictions 1,2,3,4 against target 2.2: distances 1.2, 0.2, 0.8, 1.8
        assert_eq!(donor_pool(&[1.0, 2.0, 3.0, 4.0], 2.2, 2), vec![1, 2]);
        // ties go to the lower index
        assert_eq!(donor_pool(&[1.0, 3.0, 1.0, 3.0], 2.0, 2), vec![0, 1]);
        let x_obs = array![[1.0], [2.0], [3.0], [4.0]];
        let mut rng = RngStream::new(0);
        for _ in 0..20 {
            let v = pmm_impute_column(&[1.0, 2.0, 3.0, 4.0], x_obs.view(), array![[2.2]].view(), 2, 1e-9, &mut rng).unwrap();
            assert!(v[0] == 2.0 || v[0] == 3.0);
        }
    }

    #[test]
    fn single_donor_is_deterministic() {
        let x_obs = array![[0.0], [1.0], [5.0]];
        let y = [10.0, 20.0, 30.0];
        let a = pmm_impute_column(&y, x_obs.view(), array![[4.0]].view(), 1, 1e-9, &mut RngStream::new(1)).unwrap();
        let b = pmm_impute_column(&y, x_obs.view(), array![[4.0]].view(), 1, 1e-9, &mut RngStream::new(2)).unwrap();
        assert_eq!(a, vec![30.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_donors() {
        let x = array![[1.0], [2.0]];
        assert!(pmm_impute_column(&[1.0, 2.0], x.view(), x.view(), 3, 1e-6, &mut RngStream::new(0)).is_err());
    }

    fn small_problem(seed: u64) -> (Dataset, MaskMatrix) {
        let ds = Preset::by_name("s3", Some(300), seed).unwrap().simulate().unwrap();
        let (ds, mask) = induce_loss(&ds, &LossSpec::car(0.3, seed)).unwrap();
        (ds, mask)
    }

    #[test]
    fn empty_mask_identity() {
        let (ds, _) = small_problem(1);
        let mask = MaskMatrix::empty(ds.n_rows(), ds.n_cols());
        assert_eq!(mice_impute(&ds, &mask, &MiceConfig::default()).unwrap(), ds);
    }

    #[test]
    fn donors_and_observed_cells() {
        let (ds, mask) = small_problem(2);
        let out = mice_impute(&ds, &mask, &MiceConfig { seed: 5, ..Default::default() }).unwrap();
        for j in 0..ds.n_cols() {
            let observed: Vec<u64> = (0..ds.n_rows())
                .filter(|&i| !mask.is_missing(i, j))
                .map(|i| ds.get(i, j).to_bits())
                .collect();
            for i in 0..ds.n_rows() {
                if mask.is_missing(i, j) {
                    assert!(observed.contains(&out.get(i, j).to_bits()));
                } else {
                    assert_eq!(out.get(i, j).to_bits(), ds.get(i, j).to_bits());
                }
            }
        }
        let oc = ds.outcome_col();
        assert!(out.column(oc).iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn deterministic_and_more_cycles_keep_invariants() {
        let (ds, mask) = small_problem(3);
        let cfg = MiceConfig { seed: 9, ..Default::default() };
        assert_eq!(mice_impute(&ds, &mask, &cfg).unwrap(), mice_impute(&ds, &mask, &cfg).unwrap());
        let long = mice_impute(&ds, &mask, &MiceConfig { n_cycles: 12, ..cfg }).unwrap();
        for i in 0..ds.n_rows() {
            for j in 0..ds.n_cols() {
                if !mask.is_missing(i, j) {
                    assert_eq!(long.get(i, j), ds.get(i, j));
                }
            }
        }
    }

    #[test]
    fn exact_relation_single_donor() {
        // y = 2 x1 on 50 rows; one y missing; k = 1
        let mut rng = RngStream::new(12);
        let schema = vec![
            ColumnSpec::feature("x1", ColumnKind::Continuous),
            ColumnSpec::new("time", ColumnKind::Continuous, ColumnRole::TimeToOutcome),
            ColumnSpec::new("outcome", ColumnKind::Binary, ColumnRole::Outcome),
        ];
        let mut values = Array2::zeros((50, 3));
        for i in 0..50 {
            let x: f64 = rng.random_range(0.0..10.0);
            values[[i, 0]] = x;
            values[[i, 1]] = 2.0 * x;
            values[[i, 2]] = (i % 2) as f64;
        }
        let mut mask = MaskMatrix::empty(50, 3);
        mask.set(17, 1, true);
        let ds = Dataset::with_mask(schema, values.clone(), &mask).unwrap();
        let out = mice_impute(&ds, &mask, &MiceConfig { k_donors: 1, ..Default::default() }).unwrap();
        // exhaustive scan: the fitted line reproduces y exactly, so the nearest
        // prediction belongs to the row with the closest observed y to 2 x1[17]
        let target = 2.0 * values[[17, 0]];
        let best = (0..50)
            .filter(|&i| i != 17)
            .min_by(|&a, &b| (values[[a, 1]] - target).abs().total_cmp(&(values[[b, 1]] - target).abs()))
            .unwrap();
        assert_eq!(out.get(17, 1), values[[best, 1]]);
    }

    #[test]
    fn all_missing_column_rejected() {
        let (ds, _) = small_problem(4);
        let mut mask = MaskMatrix::empty(ds.n_rows(), ds.n_cols());
        for i in 0..ds.n_rows() {
            mask.set(i, ds.time_col(), true);
        }
        assert!(matches!(mice_impute(&ds, &mask, &MiceConfig::default()), Err(Error::InsufficientData(_))));
    }
}
