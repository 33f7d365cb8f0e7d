//! Inducing loss to followup on complete data.
//!
//! A threshold vector `v` (one draw per row) decides which rows lose both
//! their outcome and their time-to-outcome. Under CAR a row is lost when
//! `v_i < tau`; under NAR additionally only rows whose outcome equals the
//! target class are eligible.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tabular::{Dataset, MaskMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mechanism {
    #[serde(alias = "car")]
    CAR,
    #[serde(alias = "nar")]
    NAR,
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mechanism::CAR => write!(f, "CAR"),
            Mechanism::NAR => write!(f, "NAR"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdDistribution {
    #[default]
    Uniform01,
    StandardNormal,
}

impl ThresholdDistribution {
    /// The `p`-quantile, so that `P(v < tau) = p`.
    pub fn threshold(self, p: f64) -> f64 {
        match self {
            ThresholdDistribution::Uniform01 => p,
            ThresholdDistribution::StandardNormal => {
                if p <= 0.0 {
                    f64::NEG_INFINITY
                } else if p >= 1.0 {
                    f64::INFINITY
                } else {
                    Normal::standard().inverse_cdf(p)
                }
            }
        }
    }

    pub fn draw(self, rng: &mut RngStream) -> f64 {
        match self {
            ThresholdDistribution::Uniform01 => rng.random::<f64>(),
            ThresholdDistribution::StandardNormal => rng.sample(StandardNormal),
        }
    }
}

fn default_target() -> u8 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub mechanism: Mechanism,
    pub proportion: f64,
    #[serde(default = "default_target")]
    pub nar_target_outcome: u8,
    #[serde(default)]
    pub threshold_distribution: ThresholdDistribution,
    #[serde(default)]
    pub seed: u64,
}

impl LossSpec {
    pub fn car(proportion: f64, seed: u64) -> Self {
        Self {
            mechanism: Mechanism::CAR,
            proportion,
            nar_target_outcome: 1,
            threshold_distribution: ThresholdDistribution::Uniform01,
            seed,
        }
    }

    pub fn nar(proportion: f64, target: u8, seed: u64) -> Self {
        Self {
            mechanism: Mechanism::NAR,
            proportion,
            nar_target_outcome: target,
            threshold_distribution: ThresholdDistribution::Uniform01,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.proportion) {
            return Err(Error::Config(format!(
                "loss proportion must lie in [0, 1], got {}",
                self.proportion
            )));
        }
        if self.nar_target_outcome > 1 {
            return Err(Error::Config("NAR target outcome must be 0 or 1".into()));
        }
        Ok(())
    }
}

/// Masks outcome and time jointly on the selected rows. Values are returned
/// unchanged; the mask carries the loss.
pub fn induce_loss(dataset: &Dataset, spec: &LossSpec) -> Result<(Dataset, MaskMatrix)> {
    induce_loss_on(dataset, &MaskMatrix::empty(dataset.n_rows(), dataset.n_cols()), spec)
}

/// As [`induce_loss`], but adds to an existing mask. The outcome and time
/// columns must be fully observed in `existing`.
pub fn induce_loss_on(
    dataset: &Dataset,
    existing: &MaskMatrix,
    spec: &LossSpec,
) -> Result<(Dataset, MaskMatrix)> {
    spec.validate()?;
    let (oc, tc) = (dataset.outcome_col(), dataset.time_col());
    if existing.column_missing_count(oc) > 0 || existing.column_missing_count(tc) > 0 {
        return Err(Error::InsufficientData(
            "outcome/time columns already contain missing cells".into(),
        ));
    }
    let mut rng = RngStream::new(spec.seed);
    let tau = spec.threshold_distribution.threshold(spec.proportion);
    let target = spec.nar_target_outcome as f64;
    let mut mask = existing.clone();
    for i in 0..dataset.n_rows() {
        let v = spec.threshold_distribution.draw(&mut rng);
        let eligible = match spec.mechanism {
            Mechanism::CAR => true,
            Mechanism::NAR => dataset.get(i, oc) == target,
        };
        if v < tau && eligible {
            mask.set(i, oc, true);
            mask.set(i, tc, true);
        }
    }
    Ok((dataset.clone(), mask))
}

/// Fraction of rows with at least one masked cell.
pub fn achieved_fraction(mask: &MaskMatrix) -> f64 {
    let n = mask.n_rows();
    if n == 0 {
        return 0.0;
    }
    (0..n).filter(|&i| mask.row_has_missing(i)).count() as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::Preset;

    fn data(n: usize) -> Dataset {
        Preset::by_name("s3", Some(n), 1).unwrap().simulate().unwrap()
    }

    #[test]
    fn zero_proportion_empty_mask() {
        let (_, mask) = induce_loss(&data(200), &LossSpec::car(0.0, 1)).unwrap();
        assert!(mask.is_empty());
    }

    #[test]
    fn full_proportion_masks_outcome_and_time_only() {
        let ds = data(200);
        let (_, mask) = induce_loss(&ds, &LossSpec::car(1.0, 1)).unwrap();
        for i in 0..ds.n_rows() {
            for j in 0..ds.n_cols() {
                let expect = j == ds.outcome_col() || j == ds.time_col();
                assert_eq!(mask.is_missing(i, j), expect);
            }
        }
        assert_eq!(achieved_fraction(&mask), 1.0);
    }

    #[test]
    fn nar_masks_only_target_class() {
        let ds = data(2_000);
        for target in [0u8, 1] {
            let (_, mask) = induce_loss(&ds, &LossSpec::nar(0.2, target, 8)).unwrap();
            assert!(!mask.is_empty());
            for i in 0..ds.n_rows() {
                if mask.row_has_missing(i) {
                    assert_eq!(ds.get(i, ds.outcome_col()), target as f64);
                }
            }
        }
    }

    #[test]
    fn car_fraction_concentrates() {
        let ds = data(25_000);
        let (_, mask) = induce_loss(&ds, &LossSpec::car(0.2, 77)).unwrap();
        let tol = 3.0 * (0.2f64 * 0.8 / 25_000.0).sqrt();
        assert!((achieved_fraction(&mask) - 0.2).abs() < tol);
    }

    #[test]
    fn normal_threshold_is_quantile() {
        assert!((ThresholdDistribution::StandardNormal.threshold(0.5)).abs() < 1e-12);
        assert!((ThresholdDistribution::StandardNormal.threshold(0.2) + 0.841_621_233_572_914_3).abs() < 1e-9);
        let ds = data(25_000);
        let spec = LossSpec {
            threshold_distribution: ThresholdDistribution::StandardNormal,
            ..LossSpec::car(0.2, 5)
        };
        let (_, mask) = induce_loss(&ds, &spec).unwrap();
        let tol = 3.0 * (0.2f64 * 0.8 / 25_000.0).sqrt();
        assert!((achieved_fraction(&mask) - 0.2).abs() < tol);
    }

    #[test]
    fn pre_existing_missingness_rejected() {
        let ds = data(50);
        let mut m = MaskMatrix::empty(50, ds.n_cols());
        m.set(3, ds.time_col(), true);
        assert!(induce_loss_on(&ds, &m, &LossSpec::car(0.2, 1)).is_err());
    }

    #[test]
    fn counting() {
        assert_eq!(achieved_fraction(&MaskMatrix::empty(20, 3)), 0.0);
        let mut m = MaskMatrix::empty(20, 3);
        for i in 0..5 {
            m.set(i * 3, 1, true);
            m.set(i * 3, 2, true);
        }
        assert_eq!(achieved_fraction(&m), 0.25);
    }

    #[test]
    fn deterministic() {
        let ds = data(500);
        let spec = LossSpec::nar(0.4, 1, 3);
        assert_eq!(induce_loss(&ds, &spec).unwrap().1, induce_loss(&ds, &spec).unwrap().1);
    }
}
