//! Denoising autoencoder imputer for the outcome and time-to-outcome cells.
//!
//! The network is trained on fully observed rows. Each batch has the
//! outcome/time pair of a random subset of rows zeroed, and the network
//! learns to reconstruct the clean batch. At imputation time masked cells
//! enter as zeros and only those cells take the network output.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::missingness::{achieved_fraction, Mechanism, ThresholdDistribution};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{mse_loss, ActivationKind, AdamConfig, LayerSpec, Mode, Network, OptimizerState};
use crate::rng::RngStream;
use crate::tabular::{ColumnKind, ColumnRole, ColumnSpec, Dataset, EncodingMap, MaskMatrix, ScalerState};

/// Rate used when `Auto` finds no missing rows in the training mask.
pub const FALLBACK_CORRUPTION_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaeMode {
    #[default]
    Overcomplete,
    Bottleneck,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RateRepr", into = "RateRepr")]
pub enum CorruptionRate {
    /// The missing-row fraction of the training mask.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RateRepr {
    Fixed(f64),
    Named(String),
}

impl TryFrom<RateRepr> for CorruptionRate {
    type Error = String;

    fn try_from(r: RateRepr) -> std::result::Result<Self, String> {
        match r {
            RateRepr::Fixed(v) => Ok(CorruptionRate::Fixed(v)),
            RateRepr::Named(s) if s.eq_ignore_ascii_case("auto") => Ok(CorruptionRate::Auto),
            RateRepr::Named(s) => Err(format!("corruption rate must be a number or \"auto\", got '{s}'")),
        }
    }
}

impl From<CorruptionRate> for RateRepr {
    fn from(r: CorruptionRate) -> Self {
        match r {
            CorruptionRate::Auto => RateRepr::Named("auto".into()),
            CorruptionRate::Fixed(v) => RateRepr::Fixed(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaeConfig {
    pub phi: usize,
    pub encoder_layers: usize,
    pub dropout_rate: f64,
    pub use_batchnorm: bool,
    pub activation: ActivationKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub binary_cutoff: f64,
    pub train_corruption_rate: CorruptionRate,
    pub corruption_distribution: ThresholdDistribution,
    /// Which rows training may corrupt. `None` means CAR when fitting
    /// directly; the experiment harness fills in its loss mechanism.
    pub corruption_mechanism: Option<Mechanism>,
    /// Outcome class eligible for corruption under NAR (default 1).
    pub corruption_target_outcome: Option<u8>,
    pub learning_rate: f64,
    pub seed: u64,
    pub mode: DaeMode,
}

impl Default for DaeConfig {
    fn default() -> Self {
        Self {
            phi: 5,
            encoder_layers: 4,
            dropout_rate: 0.2,
            use_batchnorm: true,
            activation: ActivationKind::ReLU,
            epochs: 1000,
            batch_size: 512,
            binary_cutoff: 0.5,
            train_corruption_rate: CorruptionRate::Auto,
            corruption_distribution: ThresholdDistribution::Uniform01,
            corruption_mechanism: None,
            corruption_target_outcome: None,
            learning_rate: AdamConfig::default().learning_rate,
            seed: 0,
            mode: DaeMode::Overcomplete,
        }
    }
}

impl DaeConfig {
    /// Settings for small datasets: wider steps, no batch norm, tanh.
    pub fn small_data() -> Self {
        Self {
            phi: 7,
            use_batchnorm: false,
            activation: ActivationKind::Tanh,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.encoder_layers < 1 {
            return bad("encoder_layers must be at least 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.binary_cutoff > 0.0 && self.binary_cutoff < 1.0) {
            return bad("binary_cutoff must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if self.activation == ActivationKind::Identity {
            return bad("activation must be relu or tanh");
        }
        if self.corruption_target_outcome.is_some_and(|t| t > 1) {
            return bad("corruption_target_outcome must be 0 or 1");
        }
        if let CorruptionRate::Fixed(r) = self.train_corruption_rate {
            if !(0.0..=1.0).contains(&r) {
                return bad("train_corruption_rate must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Widths of the hidden dense layers, encoder then decoder.
pub fn hidden_widths(width_in: usize, cfg: &DaeConfig) -> Vec<usize> {
    let encoder: Vec<usize> = (1..=cfg.encoder_layers)
        .map(|k| match cfg.mode {
            DaeMode::Overcomplete => width_in + k * cfg.phi,
            DaeMode::Bottleneck => width_in.saturating_sub(k * cfg.phi).max(1),
        })
        .collect();
    let mut widths = encoder.clone();
    widths.extend(encoder.iter().rev().skip(1));
    widths
}

pub fn build_architecture(width_in: usize, cfg: &DaeConfig) -> Result<Vec<LayerSpec>> {
    if width_in < 1 {
        return Err(Error::Config("network input width must be at least 1".into()));
    }
    let mut specs = Vec::new();
    let mut prev = width_in;
    for w in hidden_widths(width_in, cfg) {
        specs.push(LayerSpec::dense(prev, w));
        specs.push(LayerSpec::activation(cfg.activation));
        if w > width_in {
            if cfg.use_batchnorm {
                specs.push(LayerSpec::batch_norm(w));
            }
            specs.push(LayerSpec::dropout(cfg.dropout_rate));
        }
        prev = w;
    }
    specs.push(LayerSpec::dense(prev, width_in));
    Ok(specs)
}

/// `1` when `value > cutoff`, else `0`.
pub fn binarize(value: f64, cutoff: f64) -> f64 {
    if value > cutoff {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedImputer {
    pub network: Network,
    pub scaler: ScalerState,
    pub encoding: EncodingMap,
    pub config: DaeConfig,
    pub schema: Vec<ColumnSpec>,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    pub corruption_rate: f64,
}

#[derive(Serialize, Deserialize)]
struct FittedFile {
    checkpoint: Checkpoint,
    scaler: ScalerState,
    encoding: EncodingMap,
    config: DaeConfig,
    schema: Vec<ColumnSpec>,
    loss_history: Vec<f64>,
    corruption_rate: f64,
}

impl DaeConfig {
    pub fn mechanism(&self) -> Mechanism {
        self.corruption_mechanism.unwrap_or(Mechanism::CAR)
    }

    pub fn target_outcome(&self) -> u8 {
        self.corruption_target_outcome.unwrap_or(1)
    }
}

/// The corruption proportion, read like a loss proportion: over all rows
/// under CAR, within the target class under NAR. `Auto` estimates it from
/// the training mask, assuming every lost row belongs to the target class
/// under NAR.
fn resolve_rate(cfg: &DaeConfig, train: &Dataset, mask: &MaskMatrix) -> f64 {
    let auto = match cfg.train_corruption_rate {
        CorruptionRate::Fixed(r) => return r,
        CorruptionRate::Auto => match cfg.mechanism() {
            Mechanism::CAR => achieved_fraction(mask),
            Mechanism::NAR => {
                let oc = train.outcome_col();
                let target = cfg.target_outcome() as f64;
                let lost = (0..mask.n_rows()).filter(|&i| mask.is_missing(i, oc)).count();
                let kept = (0..mask.n_rows())
                    .filter(|&i| !mask.is_missing(i, oc) && train.get(i, oc) == target)
                    .count();
                if lost + kept > 0 {
                    lost as f64 / (lost + kept) as f64
                } else {
                    0.0
                }
            }
        },
    };
    if auto > 0.0 {
        auto
    } else {
        FALLBACK_CORRUPTION_RATE
    }
}

/// Encoded columns that training corrupts: the outcome and time blocks.
fn corruption_columns(encoding: &EncodingMap, schema: &[ColumnSpec]) -> Vec<usize> {
    let mut cols = Vec::new();
    for (j, c) in schema.iter().enumerate() {
        if matches!(c.role, ColumnRole::Outcome | ColumnRole::TimeToOutcome) {
            if let Some(b) = encoding.block_for(j) {
                cols.extend(b.start..b.start + b.width);
            }
        }
    }
    cols
}

pub fn fit(train: &Dataset, train_mask: &MaskMatrix, cfg: &DaeConfig) -> Result<FittedImputer> {
    cfg.validate()?;
    if train_mask.shape() != train.values().dim() {
        return Err(Error::Shape("training mask and dataset shapes differ".into()));
    }
    let complete = train_mask.complete_rows();
    if complete.is_empty() {
        return Err(Error::InsufficientData("no fully observed training rows".into()));
    }
    let schema = train.schema().to_vec();
    let scaler = ScalerState::fit(train, train_mask);
    let encoding = EncodingMap::from_schema(&schema);
    let rows = train.select_rows(&complete);
    let clean_mask = MaskMatrix::empty(rows.n_rows(), rows.n_cols());
    let (x, _) = encoding.encode(&scaler.apply(rows.values()), &clean_mask);
    let width = encoding.width();

    let rate = resolve_rate(cfg, train, train_mask);
    let oc = rows.outcome_col();
    let eligible: Vec<bool> = (0..rows.n_rows())
        .map(|i| match cfg.mechanism() {
            Mechanism::CAR => true,
            Mechanism::NAR => rows.get(i, oc) == cfg.target_outcome() as f64,
        })
        .collect();
    let tau = cfg.corruption_distribution.threshold(rate);
    let targets = corruption_columns(&encoding, &schema);

    let root = RngStream::new(cfg.seed);
    let mut network = Network::new(build_architecture(width, cfg)?, &mut root.substream("init"))?;
    if network.input_dim() != width || network.output_dim() != width {
        return Err(Error::Shape("network width differs from encoded width".into()));
    }
    let mut optim = OptimizerState::new(
        &network,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut order_rng = root.substream("shuffle");
    let mut corrupt_rng = root.substream("corrupt");
    let mut dropout_rng = root.substream("dropout");

    let n = x.nrows();
    let batch_size = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(batch_size) {
            // batch statistics are meaningless on a single row
            if chunk.len() < 2 && n >= 2 {
                continue;
            }
            let clean = x.select(ndarray::Axis(0), chunk);
            let mut noisy = clean.clone();
            for (r, &row) in chunk.iter().enumerate() {
                if cfg.corruption_distribution.draw(&mut corrupt_rng) < tau && eligible[row] {
                    for &c in &targets {
                        noisy[[r, c]] = 0.0;
                    }
                }
            }
            let (out, cache) = network.forward(&noisy, Mode::Train, &mut dropout_rng)?;
            let (loss, grad) = mse_loss(&out, &clean)?;
            let grads = network.backward(&cache, &grad)?;
            optim.step(&mut network, &grads)?;
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        loss_history.push(total / seen as f64);
    }
    if loss_history.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("training loss diverged".into()));
    }

    Ok(FittedImputer {
        network,
        scaler,
        encoding,
        config: *cfg,
        schema,
        loss_history,
        corruption_rate: rate,
    })
}

impl FittedImputer {
    /// Raw network reconstruction in the source column layout, on the
    /// original scale, before any cutoff. Masked cells enter as zeros.
    pub fn reconstruct(&self, data: &Dataset, mask: &MaskMatrix) -> Result<Array2<f64>> {
        if data.schema() != self.schema.as_slice() {
            return Err(Error::Schema("dataset schema differs from the fitted schema".into()));
        }
        if mask.shape() != data.values().dim() {
            return Err(Error::Shape("mask and dataset shapes differ".into()));
        }
        let (wide, _) = self.encoding.encode(&self.scaler.apply(data.values()), mask);
        let out = self.network.predict(&wide)?;
        Ok(self.scaler.invert(&self.encoding.decode(&out)))
    }

    /// Replaces masked cells with network output. Observed cells pass
    /// through unchanged; imputed continuous cells are clamped to the range
    /// seen in training.
    pub fn impute(&self, data: &Dataset, mask: &MaskMatrix) -> Result<Dataset> {
        if data.schema() != self.schema.as_slice() {
            return Err(Error::Schema("dataset schema differs from the fitted schema".into()));
        }
        if mask.is_empty() {
            return Ok(data.clone());
        }
        let recon = self.reconstruct(data, mask)?;
        let mut values = data.values().clone();
        for (j, col) in self.schema.iter().enumerate() {
            if col.role == ColumnRole::PatientId {
                continue;
            }
            for i in 0..data.n_rows() {
                if !mask.is_missing(i, j) {
                    continue;
                }
                let v = recon[[i, j]];
                values[[i, j]] = match (col.kind, self.scaler.range(j)) {
                    (ColumnKind::Binary, _) => binarize(v, self.config.binary_cutoff),
                    // keep continuous imputations inside the observed training range
                    (ColumnKind::Continuous, Some((lo, hi))) => v.clamp(lo, hi),
                    _ => v,
                };
            }
        }
        Dataset::with_mask(self.schema.clone(), values, &MaskMatrix::empty(data.n_rows(), data.n_cols()))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = FittedFile {
            checkpoint: Checkpoint::from_network(&self.network),
            scaler: self.scaler.clone(),
            encoding: self.encoding.clone(),
            config: self.config,
            schema: self.schema.clone(),
            loss_history: self.loss_history.clone(),
            corruption_rate: self.corruption_rate,
        };
        serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: FittedFile = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let network = f.checkpoint.into_network()?;
        if network.input_dim() != f.encoding.width() || network.output_dim() != f.encoding.width() {
            return Err(Error::Checkpoint("network width differs from encoded width".into()));
        }
        Ok(Self {
            network,
            scaler: f.scaler,
            encoding: f.encoding,
            config: f.config,
            schema: f.schema,
            loss_history: f.loss_history,
            corruption_rate: f.corruption_rate,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn impute(fitted: &FittedImputer, data: &Dataset, mask: &MaskMatrix) -> Result<Dataset> {
    fitted.impute(data, mask)
}
