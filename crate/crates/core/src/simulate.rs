//! Synthetic time-to-outcome data.
//!
//! Two families: one record per patient (features drawn from two independent
//! correlated groups, exponential proportional-hazards times), and several
//! records per patient (shared gamma frailty, truncated-Poisson visit counts,
//! times by inverting the patient-specific cumulative hazard).
//!
//! The outcome indicator is a thresholded standard normal latent
//! `rho * z + sqrt(1 - rho^2) * e`, where `z` is the standardized linear
//! predictor and `e` independent noise. The threshold is the
//! `censor_fraction` quantile, so the expected event fraction is exactly
//! `1 - censor_fraction`; `rho = 0` gives an independent Bernoulli draw.

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tabular::{ColumnKind, ColumnRole, ColumnSpec, Dataset};

/// Covariance made of independent diagonal blocks (zero between blocks).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCovariance {
    blocks: Vec<Array2<f64>>,
}

impl BlockCovariance {
    pub fn new(blocks: Vec<Array2<f64>>) -> Result<Self> {
        for (k, b) in blocks.iter().enumerate() {
            if b.nrows() != b.ncols() {
                return Err(Error::Shape(format!("covariance block {k} is not square")));
            }
            for ((i, j), &v) in b.indexed_iter() {
                if (v - b[[j, i]]).abs() > 1e-12 {
                    return Err(Error::Numerical(format!("covariance block {k} is not symmetric")));
                }
            }
        }
        Ok(Self { blocks })
    }

    /// Unit variances with a common off-diagonal correlation per block.
    pub fn exchangeable(sizes: &[usize], corrs: &[f64]) -> Result<Self> {
        if sizes.len() != corrs.len() {
            return Err(Error::Config("one correlation per group is required".into()));
        }
        let blocks = sizes
            .iter()
            .zip(corrs)
            .map(|(&m, &r)| Array2::from_shape_fn((m, m), |(i, j)| if i == j { 1.0 } else { r }))
            .collect();
        Self::new(blocks)
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn blocks(&self) -> &[Array2<f64>] {
        &self.blocks
    }

    /// Full dense matrix.
    pub fn to_dense(&self) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((d, d));
        let mut off = 0;
        for b in &self.blocks {
            let m = b.nrows();
            out.slice_mut(s![off..off + m, off..off + m]).assign(b);
            off += m;
        }
        out
    }

    /// Lower Cholesky factors, one per block.
    fn cholesky_factors(&self) -> Result<Vec<Array2<f64>>> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let m = b.nrows();
                let dm = DMatrix::from_fn(m, m, |i, j| b[[i, j]]);
                let chol = dm.cholesky().ok_or_else(|| {
                    Error::Numerical(format!("covariance block {k} is not positive definite"))
                })?;
                let l = chol.l();
                Ok(Array2::from_shape_fn((m, m), |(i, j)| l[(i, j)]))
            })
            .collect()
    }
}

/// `n` i.i.d. zero-mean Gaussian rows with the given covariance.
pub fn sample_mvnormal(n: usize, cov: &BlockCovariance, rng: &mut RngStream) -> Result<Array2<f64>> {
    let factors = cov.cholesky_factors()?;
    let d = cov.dim();
    let mut out = Array2::zeros((n, d));
    let mut z = Vec::with_capacity(d);
    for i in 0..n {
        z.clear();
        z.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let mut off = 0;
        for l in &factors {
            let m = l.nrows();
            for a in 0..m {
                let mut acc = 0.0;
                for b in 0..=a {
                    acc += l[[a, b]] * z[off + b];
                }
                out[[i, off + a]] = acc;
            }
            off += m;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardPattern {
    AllInGroup,
    OneInGroup,
}

/// Standard deviation of one group's contribution to the linear predictor at
/// strength 1.
pub const GROUP_EFFECT_SD: f64 = 0.5;

/// Hazard weights for consecutive feature groups. The associated features of
/// a group share one weight, chosen so that the group's contribution to the
/// linear predictor has standard deviation `strength * GROUP_EFFECT_SD` given
/// the group's exchangeable correlation.
pub fn pattern_weights(
    group_sizes: &[usize],
    group_corr: &[f64],
    patterns: &[HazardPattern],
    strengths: &[f64],
) -> Vec<f64> {
    let mut w = Vec::new();
    for (((&m, &rho), &p), &s) in group_sizes.iter().zip(group_corr).zip(patterns).zip(strengths) {
        let associated = match p {
            HazardPattern::AllInGroup => m,
            HazardPattern::OneInGroup => m.min(1),
        };
        let a = associated as f64;
        let sum_var = a + a * (a - 1.0) * rho;
        let weight = if associated > 0 { s * GROUP_EFFECT_SD / sum_var.sqrt() } else { 0.0 };
        w.extend((0..m).map(|k| if k < associated { weight } else { 0.0 }));
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSimConfig {
    pub n_rows: usize,
    pub group_sizes: [usize; 2],
    pub within_group_corr: [f64; 2],
    pub hazard_weights: Vec<f64>,
    pub baseline_rate: f64,
    #[serde(default = "default_censor_fraction")]
    pub censor_fraction: f64,
    /// Correlation between the standardized linear predictor and the outcome latent.
    #[serde(default)]
    pub outcome_association: f64,
    pub seed: u64,
}

fn default_censor_fraction() -> f64 {
    0.35
}

impl SingleSimConfig {
    pub fn n_features(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hazard_weights.len() != self.n_features() {
            return Err(Error::Config(format!(
                "{} hazard weights for {} features",
                self.hazard_weights.len(),
                self.n_features()
            )));
        }
        if self.within_group_corr.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("within-group correlation must lie in [0, 1)".into()));
        }
        validate_common(self.baseline_rate, self.censor_fraction, self.outcome_association)
    }

    pub fn covariance(&self) -> Result<BlockCovariance> {
        BlockCovariance::exchangeable(&self.group_sizes, &self.within_group_corr)
    }
}

fn validate_common(baseline_rate: f64, censor_fraction: f64, association: f64) -> Result<()> {
    if !(baseline_rate > 0.0 && baseline_rate.is_finite()) {
        return Err(Error::Config("baseline rate must be positive".into()));
    }
    if !(censor_fraction > 0.0 && censor_fraction < 1.0) {
        return Err(Error::Config("censor fraction must lie in (0, 1)".into()));
    }
    if !(0.0..1.0).contains(&association) {
        return Err(Error::Config("outcome association must lie in [0, 1)".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSimConfig {
    pub n_patients: usize,
    pub n_features: usize,
    #[serde(default)]
    pub feature_corr: f64,
    pub visits_min: usize,
    pub visits_max: usize,
    pub visit_mean: f64,
    pub frailty_variance: f64,
    pub hazard_weights: Vec<f64>,
    pub baseline_rate: f64,
    #[serde(default = "default_censor_fraction")]
    pub censor_fraction: f64,
    #[serde(default)]
    pub outcome_association: f64,
    pub seed: u64,
}

impl MultiSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hazard_weights.len() != self.n_features {
            return Err(Error::Config(format!(
                "{} hazard weights for {} features",
                self.hazard_weights.len(),
                self.n_features
            )));
        }
        if self.visits_min == 0 || self.visits_min > self.visits_max {
            return Err(Error::Config("need 1 <= visits_min <= visits_max".into()));
        }
        if self.visit_mean.is_nan() || self.visit_mean <= 0.0 {
            return Err(Error::Config("visit mean must be positive".into()));
        }
        if !(self.frailty_variance >= 0.0 && self.frailty_variance.is_finite()) {
            return Err(Error::Config("frailty variance must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.feature_corr) {
            return Err(Error::Config("feature correlation must lie in [0, 1)".into()));
        }
        validate_common(self.baseline_rate, self.censor_fraction, self.outcome_association)
    }
}

fn linear_predictor(x: &Array2<f64>, w: &[f64]) -> Array1<f64> {
    x.dot(&Array1::from(w.to_vec()))
}

/// Standard deviation of `w . x` for `x ~ N(0, cov)`.
fn predictor_sd(w: &[f64], cov: &Array2<f64>) -> f64 {
    let w = Array1::from(w.to_vec());
    w.dot(&cov.dot(&w)).max(0.0).sqrt()
}

fn draw_outcome(
    lp: f64,
    lp_sd: f64,
    association: f64,
    threshold: f64,
    rng: &mut RngStream,
) -> f64 {
    let z = if lp_sd > 0.0 { lp / lp_sd } else { 0.0 };
    let e: f64 = rng.sample(StandardNormal);
    let latent = association * z + (1.0 - association * association).sqrt() * e;
    if latent > threshold {
        1.0
    } else {
        0.0
    }
}

fn censor_threshold(censor_fraction: f64) -> f64 {
    Normal::standard().inverse_cdf(censor_fraction)
}

fn single_schema(n_features: usize) -> Vec<ColumnSpec> {
    let mut schema: Vec<ColumnSpec> = (1..=n_features)
        .map(|k| ColumnSpec::feature(format!("x{k}"), ColumnKind::Continuous))
        .collect();
    schema.push(ColumnSpec::new("time", ColumnKind::Continuous, ColumnRole::TimeToOutcome));
    schema.push(ColumnSpec::new("outcome", ColumnKind::Binary, ColumnRole::Outcome));
    schema
}

/// One record per patient: `[x1..xd, time, outcome]`.
pub fn simulate_single(cfg: &SingleSimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let cov = cfg.covariance()?;
    let x = sample_mvnormal(cfg.n_rows, &cov, &mut root.substream("features"))?;
    let lp = linear_predictor(&x, &cfg.hazard_weights);
    let lp_sd = predictor_sd(&cfg.hazard_weights, &cov.to_dense());
    let threshold = censor_threshold(cfg.censor_fraction);

    let mut time_rng = root.substream("time");
    let mut outcome_rng = root.substream("outcome");
    let d = cfg.n_features();
    let mut values = Array2::zeros((cfg.n_rows, d + 2));
    values.slice_mut(s![.., ..d]).assign(&x);
    for i in 0..cfg.n_rows {
        let rate = cfg.baseline_rate * lp[i].exp();
        values[[i, d]] = -time_rng.open01().ln() / rate;
        values[[i, d + 1]] = draw_outcome(lp[i], lp_sd, cfg.outcome_association, threshold, &mut outcome_rng);
    }
    Dataset::new(single_schema(d), values)
}

fn truncated_poisson(mean: f64, lo: usize, hi: usize, rng: &mut RngStream) -> usize {
    let poisson = Poisson::new(mean).expect("validated positive mean");
    loop {
        let k = poisson.sample(rng) as usize;
        if (lo..=hi).contains(&k) {
            return k;
        }
    }
}

/// Several records per patient: `[patient_id, x1..xd, time, outcome]`.
pub fn simulate_multiple(cfg: &MultiSimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let mut visit_rng = root.substream("visits");
    let mut frailty_rng = root.substream("frailty");
    let mut time_rng = root.substream("time");
    let mut outcome_rng = root.substream("outcome");
    let mut feature_rng = root.substream("features");

    let frailty = if cfg.frailty_variance > 0.0 {
        Some(
            Gamma::new(1.0 / cfg.frailty_variance, cfg.frailty_variance)
                .map_err(|e| Error::Config(format!("frailty distribution: {e}")))?,
        )
    } else {
        None
    };

    let mut visits = Vec::with_capacity(cfg.n_patients);
    let mut frailties = Vec::with_capacity(cfg.n_patients);
    for _ in 0..cfg.n_patients {
        visits.push(truncated_poisson(cfg.visit_mean, cfg.visits_min, cfg.visits_max, &mut visit_rng));
        frailties.push(match &frailty {
            Some(g) => g.sample(&mut frailty_rng),
            None => 1.0,
        });
    }
    let n_rows: usize = visits.iter().sum();

    let d = cfg.n_features;
    let cov = BlockCovariance::exchangeable(&[d], &[cfg.feature_corr])?;
    let x = sample_mvnormal(n_rows, &cov, &mut feature_rng)?;
    let lp = linear_predictor(&x, &cfg.hazard_weights);
    let lp_sd = predictor_sd(&cfg.hazard_weights, &cov.to_dense());
    let threshold = censor_threshold(cfg.censor_fraction);

    let mut values = Array2::zeros((n_rows, d + 3));
    let mut row = 0;
    for (p, (&k, &z)) in visits.iter().zip(&frailties).enumerate() {
        for _ in 0..k {
            values[[row, 0]] = (p + 1) as f64;
            values.slice_mut(s![row, 1..=d]).assign(&x.row(row));
            // inverse of H(t) = rate * z * exp(lp) * t evaluated at -ln U
            let rate = cfg.baseline_rate * z * lp[row].exp();
            values[[row, d + 1]] = -time_rng.open01().ln() / rate;
            values[[row, d + 2]] = draw_outcome(lp[row], lp_sd, cfg.outcome_association, threshold, &mut outcome_rng);
            row += 1;
        }
    }

    let mut schema = vec![ColumnSpec::new("patient_id", ColumnKind::Continuous, ColumnRole::PatientId)];
    schema.extend(single_schema(d));
    Dataset::new(schema, values)
}

/// Named simulation presets mirroring the shapes of the single-outcome
/// (S1-S5) and multiple-outcome (M1-M5) benchmark datasets.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Single(SingleSimConfig),
    Multiple(MultiSimConfig),
}

impl Preset {
    /// Looks up `s1`..`s5` or `m1`..`m5`. `size` overrides the row count
    /// (single) or patient count (multiple).
    pub fn by_name(name: &str, size: Option<usize>, seed: u64) -> Result<Preset> {
        use HazardPattern::*;
        let single = |vars: usize,
                      corr: [f64; 2],
                      patterns: [HazardPattern; 2],
                      strengths: [f64; 2],
                      association: f64| {
            let d = vars - 2;
            let group_sizes = [d - d / 2, d / 2];
            Preset::Single(SingleSimConfig {
                n_rows: size.unwrap_or(25_000),
                group_sizes,
                within_group_corr: corr,
                hazard_weights: pattern_weights(&group_sizes, &corr, &patterns, &strengths),
                baseline_rate: 0.5,
                censor_fraction: 0.35,
                outcome_association: association,
                seed,
            })
        };
        let multiple = |patients: usize, visit_mean: f64, corr: f64, n_assoc: usize, strength: f64, frailty: f64, association: f64| {
            let d = 23;
            let pattern = if n_assoc > 1 { AllInGroup } else { OneInGroup };
            Preset::Multiple(MultiSimConfig {
                n_patients: size.unwrap_or(patients),
                n_features: d,
                feature_corr: corr,
                visits_min: 3,
                visits_max: 8,
                visit_mean,
                frailty_variance: frailty,
                hazard_weights: pattern_weights(&[n_assoc, d - n_assoc], &[corr, corr], &[pattern, OneInGroup], &[strength, 0.0]),
                baseline_rate: 0.01,
                censor_fraction: 0.35,
                outcome_association: association,
                seed,
            })
        };
        Ok(match name.to_ascii_lowercase().as_str() {
            "s1" => single(35, [0.3, 0.5], [AllInGroup, OneInGroup], [1.0, 0.5], 0.8),
            "s2" => single(40, [0.5, 0.2], [AllInGroup, AllInGroup], [1.0, 1.0], 0.9),
            "s3" => single(30, [0.2, 0.4], [OneInGroup, OneInGroup], [0.5, 0.5], 0.6),
            "s4" => single(50, [0.1, 0.1], [OneInGroup, AllInGroup], [0.5, 0.0], 0.4),
            "s5" => single(45, [0.4, 0.6], [AllInGroup, AllInGroup], [1.0, 0.5], 0.9),
            "m1" => multiple(5_000, 5.2, 0.2, 6, 1.0, 0.5, 0.7),
            "m2" => multiple(3_400, 5.2, 0.3, 1, 1.0, 0.5, 0.7),
            "m3" => multiple(7_700, 5.3, 0.1, 12, 1.0, 1.0, 0.8),
            "m4" => multiple(5_900, 5.2, 0.4, 6, 0.5, 0.5, 0.6),
            "m5" => multiple(4_950, 5.2, 0.2, 23, 1.0, 0.25, 0.7),
            other => return Err(Error::Config(format!("unknown preset '{other}'"))),
        })
    }

    pub fn simulate(&self) -> Result<Dataset> {
        match self {
            Preset::Single(c) => simulate_single(c),
            Preset::Multiple(c) => simulate_multiple(c),
        }
    }
}
