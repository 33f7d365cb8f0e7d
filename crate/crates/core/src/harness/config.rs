//! TOML experiment and suite configs, canonical snapshots and fingerprints.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dae::DaeConfig;
use crate::error::{Error, Result};
use crate::mice::MiceConfig;
use crate::missingness::{LossSpec, Mechanism};
use crate::rng::derive_seed;
use crate::simulate::Preset;
use crate::tabular::{validate_schema, ColumnSpec, Dataset, MaskMatrix, DEFAULT_MISSING_TOKEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Impute,
    Score,
    KaplanMeier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[serde(rename = "DAE", alias = "dae")]
    Dae,
    #[serde(rename = "MICE", alias = "mice")]
    Mice,
    #[serde(rename = "None", alias = "none")]
    None,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Dae => "DAE",
            Method::Mice => "MICE",
            Method::None => "None",
        })
    }
}

/// Either a simulator preset or a CSV file with its schema.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Row (or patient) count override for presets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Vec<ColumnSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_token: Option<String>,
}

impl DataConfig {
    pub fn preset(name: &str, n: Option<usize>) -> Self {
        Self {
            preset: Some(name.into()),
            n,
            ..Self::default()
        }
    }

    /// Short dataset label used in report rows.
    pub fn label(&self) -> String {
        if let Some(p) = &self.preset {
            return p.to_ascii_uppercase();
        }
        self.csv
            .as_ref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.preset, &self.csv) {
            (Some(name), None) => {
                Preset::by_name(name, self.n, 0)?;
                if self.schema.is_some() {
                    return Err(Error::Config("a schema is only used with csv data".into()));
                }
                Ok(())
            }
            (None, Some(path)) => {
                let schema = self
                    .schema
                    .as_ref()
                    .ok_or_else(|| Error::Config("csv data needs a schema".into()))?;
                validate_schema(schema)?;
                if !path.exists() {
                    return Err(Error::Config(format!("data file {} does not exist", path.display())));
                }
                Ok(())
            }
            _ => Err(Error::Config("data needs exactly one of 'preset' or 'csv'".into())),
        }
    }

    /// The complete dataset plus any cells already missing in the source.
    pub fn load(&self, seed: u64) -> Result<(Dataset, MaskMatrix)> {
        if let Some(name) = &self.preset {
            let ds = Preset::by_name(name, self.n, seed)?.simulate()?;
            let mask = MaskMatrix::empty(ds.n_rows(), ds.n_cols());
            return Ok((ds, mask));
        }
        let path = self.csv.as_ref().ok_or_else(|| Error::Config("no data source".into()))?;
        let schema = self.schema.clone().ok_or_else(|| Error::Config("csv data needs a schema".into()))?;
        let token = self.missing_token.as_deref().unwrap_or(DEFAULT_MISSING_TOKEN);
        crate::tabular::load_csv(path, &schema, token)
    }
}

fn default_train_fraction() -> f64 {
    0.7
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub by_patient: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: default_train_fraction(),
            by_patient: false,
        }
    }
}

fn default_analyses() -> BTreeSet<Analysis> {
    [Analysis::Score].into_iter().collect()
}

fn default_methods() -> BTreeSet<Method> {
    [Method::Dae, Method::Mice].into_iter().collect()
}

/// One experiment. Stage seeds (simulation, loss, split, DAE, MICE) are
/// derived from `seed`; seeds written inside the sections are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Not part of the snapshot: moving the output does not change results.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_analyses")]
    pub analyses: BTreeSet<Analysis>,
    #[serde(default = "default_methods")]
    pub methods: BTreeSet<Method>,
    pub data: DataConfig,
    pub loss: LossSpec,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub dae: DaeConfig,
    #[serde(default)]
    pub mice: MiceConfig,
}

impl ExperimentConfig {
    pub fn new(data: DataConfig, loss: LossSpec) -> Self {
        Self {
            name: None,
            seed: 0,
            output_dir: None,
            analyses: default_analyses(),
            methods: default_methods(),
            data,
            loss,
            split: SplitConfig::default(),
            dae: DaeConfig::default(),
            mice: MiceConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg.with_derived_seeds())
    }

    /// Reads a config file. A relative csv path is taken relative to the
    /// config file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(csv), Some(dir)) = (&cfg.data.csv, path.parent()) {
            if csv.is_relative() {
                cfg.data.csv = Some(dir.join(csv));
            }
        }
        Ok(cfg)
    }

    /// Overwrites every stage seed with `hash(seed, stage)`.
    pub fn with_derived_seeds(mut self) -> Self {
        self.loss.seed = derive_seed(self.seed, "loss");
        self.dae.seed = derive_seed(self.seed, "dae");
        self.mice.seed = derive_seed(self.seed, "mice");
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.with_derived_seeds()
    }

    /// The DAE settings with unset corruption fields taken from the loss
    /// spec, so training corruption follows the loss mechanism.
    pub fn resolved_dae(&self) -> DaeConfig {
        let mut dae = self.dae;
        dae.corruption_mechanism.get_or_insert(self.loss.mechanism);
        dae.corruption_target_outcome.get_or_insert(self.loss.nar_target_outcome);
        dae
    }

    pub fn simulate_seed(&self) -> u64 {
        derive_seed(self.seed, "simulate")
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    pub fn validate(&self) -> Result<()> {
        if self.analyses.is_empty() {
            return Err(Error::Config("analyses must not be empty".into()));
        }
        if self.methods.is_empty() || self.methods.contains(&Method::None) {
            return Err(Error::Config("methods must be a non-empty subset of {dae, mice}".into()));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config("split.train_fraction must lie in (0, 1)".into()));
        }
        self.data.validate()?;
        self.loss.validate()?;
        self.dae.validate()?;
        self.mice.validate()?;
        Ok(())
    }

    /// Label such as `S1-CAR-20`.
    pub fn experiment_id(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!(
                "{}-{}-{}",
                self.data.label(),
                self.loss.mechanism,
                format_proportion(self.loss.proportion)
            )
        })
    }

    /// Canonical TOML of every knob that affects results.
    pub fn snapshot(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the snapshot, hex encoded.
    pub fn fingerprint(&self) -> Result<String> {
        let digest = Sha256::digest(self.snapshot()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Percent label without trailing zeros, e.g. `20` or `12.5`.
pub fn format_proportion(p: f64) -> String {
    let pct = p * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

/// Preset/proportion/mechanism grid expanded over a base config.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteGrid {
    #[serde(default)]
    pub presets: Vec<String>,
    #[serde(default)]
    pub proportions: Vec<f64>,
    #[serde(default)]
    pub mechanisms: Vec<Mechanism>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Paths of further experiment configs, relative to the suite file.
    #[serde(default)]
    pub experiments: Vec<PathBuf>,
    #[serde(default)]
    pub base: Option<ExperimentConfig>,
    #[serde(default)]
    pub grid: Option<SuiteGrid>,
}

impl SuiteConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(dir) = path.parent() {
            for p in &mut cfg.experiments {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// All experiments in order: listed files first, then the grid in
    /// preset-major, then mechanism, then proportion order. Each gets a
    /// master seed derived from the suite seed and its id.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        let mut out = Vec::new();
        for p in &self.experiments {
            out.push(ExperimentConfig::from_file(p)?);
        }
        if let Some(grid) = &self.grid {
            let base = self
                .base
                .clone()
                .ok_or_else(|| Error::Config("a suite grid needs a [base] experiment".into()))?;
            let presets = if grid.presets.is_empty() {
                vec![base.data.preset.clone().ok_or_else(|| Error::Config("grid needs presets".into()))?]
            } else {
                grid.presets.clone()
            };
            let mechanisms = if grid.mechanisms.is_empty() { vec![base.loss.mechanism] } else { grid.mechanisms.clone() };
            let proportions = if grid.proportions.is_empty() { vec![base.loss.proportion] } else { grid.proportions.clone() };
            for preset in &presets {
                for &mechanism in &mechanisms {
                    for &proportion in &proportions {
                        let mut cfg = base.clone();
                        cfg.name = None;
                        cfg.data = DataConfig::preset(preset, base.data.n);
                        cfg.loss.mechanism = mechanism;
                        cfg.loss.proportion = proportion;
                        out.push(cfg);
                    }
                }
            }
        } else if let Some(base) = &self.base {
            out.push(base.clone());
        }
        if out.is_empty() {
            return Err(Error::Config("suite contains no experiments".into()));
        }
        Ok(out
            .into_iter()
            .map(|cfg| {
                let id = cfg.experiment_id();
                cfg.with_seed(derive_seed(self.seed, &id))
            })
            .collect())
    }
}
