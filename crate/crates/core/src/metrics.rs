//! Scores on masked cells only: outcome accuracy (with a Wilson interval),
//! sensitivity, specificity and time RMSE.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::tabular::{Dataset, MaskMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn correct(&self) -> usize {
        self.tp + self.tn
    }

    /// `(TP + TN) / (TP + TN + FP + FN)`; `None` when nothing was scored.
    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.correct(), self.total())
    }

    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn check_alignment(imputed: &Dataset, truth: &Dataset, mask: &MaskMatrix) -> Result<()> {
    if imputed.schema() != truth.schema() {
        return Err(Error::Schema("imputed and truth schemas differ".into()));
    }
    if imputed.values().dim() != truth.values().dim() || mask.shape() != truth.values().dim() {
        return Err(Error::Shape("imputed, truth and mask shapes differ".into()));
    }
    Ok(())
}

/// Tallies imputed versus true outcomes over masked outcome cells
/// (positive class = 1).
pub fn score_outcome(imputed: &Dataset, truth: &Dataset, mask: &MaskMatrix) -> Result<ConfusionCounts> {
    check_alignment(imputed, truth, mask)?;
    let oc = truth.outcome_col();
    let mut c = ConfusionCounts::default();
    for i in 0..truth.n_rows() {
        if !mask.is_missing(i, oc) {
            continue;
        }
        let pred = imputed.get(i, oc);
        if pred != 0.0 && pred != 1.0 {
            return Err(Error::InvalidCell {
                row: i + 1,
                column: truth.schema()[oc].name.clone(),
                message: format!("imputed outcome {pred} is not binary"),
            });
        }
        match (pred == 1.0, truth.get(i, oc) == 1.0) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `sqrt(mean((t_hat - t)^2))` over masked time cells.
pub fn rmse_time(imputed: &Dataset, truth: &Dataset, mask: &MaskMatrix) -> Result<f64> {
    check_alignment(imputed, truth, mask)?;
    let tc = truth.time_col();
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..truth.n_rows() {
        if mask.is_missing(i, tc) {
            let d = imputed.get(i, tc) - truth.get(i, tc);
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData("no masked time cells to score".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// Wilson score interval for `successes / n` at confidence `level`.
pub fn wilson_interval(successes: usize, n: usize, level: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::InsufficientData("no scored cells for an interval".into()));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(Error::Config(format!("confidence level {level} outside [0, 1)")));
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z = if level == 0.0 {
        0.0
    } else {
        Normal::standard().inverse_cdf(0.5 + level / 2.0)
    };
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = (centre - half).clamp(0.0, 1.0).min(p);
    let hi = (centre + half).clamp(0.0, 1.0).max(p);
    Ok((lo, hi))
}

pub fn accuracy_ci(counts: &ConfusionCounts, level: f64) -> Result<(f64, f64)> {
    wilson_interval(counts.correct(), counts.total(), level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub accuracy: f64,
    pub acc_lo: f64,
    pub acc_hi: f64,
    pub rmse: f64,
    /// `None` when no true positives or negatives were scored.
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub n_scored: usize,
    pub counts: ConfusionCounts,
}

impl ScoreReport {
    /// Accuracy in percent with its interval, e.g. `94.7(93.5,95.8)`.
    pub fn accuracy_cell(&self) -> String {
        format_percent_ci(self.accuracy, self.acc_lo, self.acc_hi)
    }
}

pub fn format_percent_ci(value: f64, lo: f64, hi: f64) -> String {
    format!("{:.1}({:.1},{:.1})", value * 100.0, lo * 100.0, hi * 100.0)
}

pub fn score(imputed: &Dataset, truth: &Dataset, mask: &MaskMatrix) -> Result<ScoreReport> {
    let counts = score_outcome(imputed, truth, mask)?;
    let accuracy = counts
        .accuracy()
        .ok_or_else(|| Error::InsufficientData("no masked outcome cells to score".into()))?;
    let (acc_lo, acc_hi) = accuracy_ci(&counts, 0.95)?;
    Ok(ScoreReport {
        accuracy,
        acc_lo,
        acc_hi,
        rmse: rmse_time(imputed, truth, mask)?,
        sensitivity: counts.sensitivity(),
        specificity: counts.specificity(),
        n_scored: counts.total(),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{ColumnKind, ColumnRole, ColumnSpec};
    use ndarray::Array2;

    fn counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> ConfusionCounts {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    #[test]
    fn accuracy_arithmetic() {
        let c = counts(3, 4, 2, 1);
        assert_eq!(c.accuracy(), Some(0.7));
        assert_eq!(c.sensitivity(), Some(0.75));
        assert_eq!(c.specificity(), Some(4.0 / 6.0));
    }

    #[test]
    fn perfect_and_degenerate() {
        let c = counts(5, 5, 0, 0);
        assert_eq!((c.accuracy(), c.sensitivity(), c.specificity()), (Some(1.0), Some(1.0), Some(1.0)));
        // always predicts 0, half the truth is 1
        let c = counts(0, 5, 0, 5);
        assert_eq!((c.accuracy(), c.sensitivity(), c.specificity()), (Some(0.5), Some(0.0), Some(1.0)));
        // no positives at all: sensitivity undefined, not zero
        assert_eq!(counts(0, 4, 1, 0).sensitivity(), None);
    }

    #[test]
    fn wilson_half() {
        let (lo, hi) = wilson_interval(50, 100, 0.95).unwrap();
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3, "{lo} {hi}");
    }

    #[test]
    fn wilson_all_correct() {
        let (lo, hi) = wilson_interval(100, 100, 0.95).unwrap();
        assert_eq!(hi, 1.0);
        assert!(lo > 0.96);
    }

    #[test]
    fn zero_level_collapses() {
        let (lo, hi) = wilson_interval(30, 40, 0.0).unwrap();
        assert_eq!((lo, hi), (0.75, 0.75));
    }

    #[test]
    fn interval_formatting() {
        assert_eq!(format_percent_ci(0.947, 0.935, 0.958), "94.7(93.5,95.8)");
    }

    fn frame(rows: &[(f64, f64)]) -> Dataset {
        let schema = vec![
            ColumnSpec::feature("x", ColumnKind::Continuous),
            ColumnSpec::new("time", ColumnKind::Continuous, ColumnRole::TimeToOutcome),
            ColumnSpec::new("outcome", ColumnKind::Binary, ColumnRole::Outcome),
        ];
        let values = Array2::from_shape_fn((rows.len(), 3), |(i, j)| match j {
            0 => i as f64,
            1 => rows[i].0,
            _ => rows[i].1,
        });
        Dataset::new(schema, values).unwrap()
    }

    fn mask_all(n: usize) -> MaskMatrix {
        let mut m = MaskMatrix::empty(n, 3);
        for i in 0..n {
            m.set(i, 1, true);
            m.set(i, 2, true);
        }
        m
    }

    #[test]
    fn rmse_cases() {
        let truth = frame(&[(3.0, 1.0), (2.0, 0.0), (1.0, 1.0)]);
        let imputed = frame(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]);
        let r = rmse_time(&imputed, &truth, &mask_all(3)).unwrap();
        assert!((r - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(rmse_time(&truth, &truth, &mask_all(3)).unwrap(), 0.0);
        assert_eq!(rmse_time(&frame(&[(0.0, 1.0)]), &frame(&[(5.0, 1.0)]), &mask_all(1)).unwrap(), 5.0);
        assert!(rmse_time(&truth, &truth, &MaskMatrix::empty(3, 3)).is_err());
    }

    #[test]
    fn non_binary_imputation_rejected() {
        let truth = frame(&[(1.0, 1.0)]);
        let mut bad = truth.clone();
        bad.values_mut()[[0, 2]] = 0.7;
        assert!(score_outcome(&bad, &truth, &mask_all(1)).is_err());
    }

    #[test]
    fn unmasked_cells_never_read() {
        let truth = frame(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0), (4.0, 0.0)]);
        let mut mask = MaskMatrix::empty(4, 3);
        mask.set(1, 1, true);
        mask.set(1, 2, true);
        let mut imputed = truth.clone();
        imputed.values_mut()[[1, 1]] = 2.5;
        let base = score(&imputed, &truth, &mask).unwrap();
        // scramble every unmasked cell in both frames
        let mut imputed2 = imputed.clone();
        let mut truth2 = truth.clone();
        for i in [0, 2, 3] {
            imputed2.values_mut()[[i, 1]] = 99.0;
            imputed2.values_mut()[[i, 2]] = 1.0 - imputed.get(i, 2);
            truth2.values_mut()[[i, 1]] = -7.0;
        }
        assert_eq!(score(&imputed2, &truth2, &mask).unwrap(), base);
    }
}
