use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use ltfu_core::dae::{self, DaeConfig};
use ltfu_core::harness::report::{render_table, to_json_pretty, write_text};
use ltfu_core::harness::{run_experiment, run_suite, ExperimentConfig, Method, OutputFormat, SuiteConfig, TableRow};
use ltfu_core::metrics::{self, ScoreReport};
use ltfu_core::mice::{self, MiceConfig};
use ltfu_core::missingness::{induce_loss_on, LossSpec, Mechanism, ThresholdDistribution};
use ltfu_core::simulate::Preset;
use ltfu_core::survival::{kaplan_meier, km_confidence_band, median_survival, write_curve_csv};
use ltfu_core::tabular::{load_csv, split_indices, vstack_masks, write_csv, ColumnSpec, Dataset, MaskMatrix, DEFAULT_MISSING_TOKEN};

const SCHEMA_FILE: &str = "schema.json";

#[derive(Parser)]
#[command(name = "ltfu", version, about = "Impute loss-to-followup outcome and time cells and evaluate the imputations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dae,
    Mice,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Car,
    Nar,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistributionArg {
    Uniform01,
    StandardNormal,
}

#[derive(clap::Args)]
struct Common {
    /// TOML config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(clap::Args)]
struct DataArgs {
    /// CSV data file
    #[arg(long)]
    data: PathBuf,
    /// JSON schema (defaults to schema.json next to the data file)
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a preset dataset into <out>/data.csv with its schema
    Simulate {
        #[arg(long)]
        preset: String,
        /// Rows (single-outcome presets) or patients (multi-visit presets)
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Induce loss to followup into <out>/corrupted.csv
    Corrupt {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        mechanism: MechanismArg,
        #[arg(long)]
        proportion: f64,
        /// Outcome class eligible for loss under NAR
        #[arg(long, default_value_t = 1)]
        target: u8,
        #[arg(long, value_enum, default_value = "uniform01")]
        distribution: DistributionArg,
        #[command(flatten)]
        common: Common,
    },
    /// Split rows into <out>/train.csv and <out>/test.csv
    Split {
        #[command(flatten)]
        data: DataArgs,
        /// Complete data to split with the same rows
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 0.7)]
        fraction: f64,
        #[arg(long)]
        by_patient: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Impute missing cells into <out>/imputed_<method>.csv
    Impute {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[command(flatten)]
        data: DataArgs,
        /// Training data (DAE fit / extra MICE rows); defaults to --data
        #[arg(long)]
        train: Option<PathBuf>,
        /// Override the configured DAE epochs
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score imputed outcome/time cells against the truth
    Score {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        imputed: PathBuf,
        /// The corrupted file whose missing cells are scored
        #[arg(long)]
        masked: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Kaplan-Meier curve and median survival
    Km {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Run one experiment config end to end
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run a suite config into one consolidated table
    Suite {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Corrupt { .. } => "corrupt",
            Command::Split { .. } => "split",
            Command::Impute { .. } => "impute",
            Command::Score { .. } => "score",
            Command::Km { .. } => "km",
            Command::Run { .. } => "run",
            Command::Suite { .. } => "suite",
        }
    }
}

fn schema_path(explicit: Option<&Path>, data: &Path) -> Result<PathBuf> {
    if !data.exists() {
        bail!("data file {} not found", data.display());
    }
    Ok(explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| data.parent().unwrap_or(Path::new(".")).join(SCHEMA_FILE)))
}

fn read_schema(path: &Path) -> Result<Vec<ColumnSpec>> {
    if !path.exists() {
        bail!("schema file {} not found (pass --schema)", path.display());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading schema {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing schema {}", path.display()))
}

fn load(data: &Path, schema: &[ColumnSpec]) -> Result<(Dataset, MaskMatrix)> {
    if !data.exists() {
        bail!("data file {} not found", data.display());
    }
    Ok(load_csv(data, schema, DEFAULT_MISSING_TOKEN)?)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_schema(dir: &Path, schema: &[ColumnSpec]) -> Result<()> {
    write_text(dir.join(SCHEMA_FILE), &to_json_pretty(&schema)?)?;
    Ok(())
}

/// Reads one optional table (`[dae]`, `[mice]`) from a TOML config file.
fn config_section<T: DeserializeOwned + Default>(path: Option<&Path>, key: &str) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match table.get(key) {
        Some(v) => v.clone().try_into().with_context(|| format!("invalid [{key}] section")),
        None => Ok(T::default()),
    }
}

fn score_output(report: &ScoreReport, format: OutputFormat) -> Result<String> {
    Ok(match format {
        OutputFormat::Json => to_json_pretty(report)?,
        OutputFormat::Csv => {
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            format!(
                "accuracy,acc_lo,acc_hi,rmse,sensitivity,specificity,n_scored\n{},{},{},{},{},{},{}\n",
                report.accuracy,
                report.acc_lo,
                report.acc_hi,
                report.rmse,
                f(report.sensitivity),
                f(report.specificity),
                report.n_scored
            )
        }
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { preset, n, common } => {
            let seed = common.seed.unwrap_or(0);
            let ds = Preset::by_name(&preset, n, seed)?.simulate().context("simulate")?;
            let dir = out_dir(&common)?;
            write_csv(&ds, &MaskMatrix::empty(ds.n_rows(), ds.n_cols()), dir.join("data.csv"))?;
            write_schema(&dir, ds.schema())?;
            eprintln!("wrote {} rows x {} columns to {}", ds.n_rows(), ds.n_cols(), dir.join("data.csv").display());
        }
        Command::Corrupt { data, mechanism, proportion, target, distribution, common } => {
            let schema = read_schema(&schema_path(data.schema.as_deref(), &data.data)?)?;
            let (ds, existing) = load(&data.data, &schema)?;
            let spec = LossSpec {
                mechanism: match mechanism {
                    MechanismArg::Car => Mechanism::CAR,
                    MechanismArg::Nar => Mechanism::NAR,
                },
                proportion,
                nar_target_outcome: target,
                threshold_distribution: match distribution {
                    DistributionArg::Uniform01 => ThresholdDistribution::Uniform01,
                    DistributionArg::StandardNormal => ThresholdDistribution::StandardNormal,
                },
                seed: common.seed.unwrap_or(0),
            };
            let (ds, mask) = induce_loss_on(&ds, &existing, &spec).context("corrupt")?;
            let dir = out_dir(&common)?;
            write_csv(&ds, &mask, dir.join("corrupted.csv"))?;
            write_schema(&dir, &schema)?;
            eprintln!(
                "masked {} of {} rows",
                (0..mask.n_rows()).filter(|&i| mask.row_has_missing(i)).count(),
                mask.n_rows()
            );
        }
        Command::Split { data, truth, fraction, by_patient, common } => {
            let schema = read_schema(&schema_path(data.schema.as_deref(), &data.data)?)?;
            let (ds, mask) = load(&data.data, &schema)?;
            let idx = split_indices(&ds, fraction, common.seed.unwrap_or(0), by_patient).context("split")?;
            let dir = out_dir(&common)?;
            write_csv(&ds.select_rows(&idx.train), &mask.select_rows(&idx.train), dir.join("train.csv"))?;
            write_csv(&ds.select_rows(&idx.test), &mask.select_rows(&idx.test), dir.join("test.csv"))?;
            if let Some(t) = truth {
                let (truth, tmask) = load(&t, &schema)?;
                if truth.n_rows() != ds.n_rows() {
                    bail!("split: truth has {} rows, data has {}", truth.n_rows(), ds.n_rows());
                }
                write_csv(&truth.select_rows(&idx.train), &tmask.select_rows(&idx.train), dir.join("train_truth.csv"))?;
                write_csv(&truth.select_rows(&idx.test), &tmask.select_rows(&idx.test), dir.join("test_truth.csv"))?;
            }
            write_schema(&dir, &schema)?;
            write_text(
                dir.join("split.json"),
                &to_json_pretty(&serde_json::json!({ "train": idx.train, "test": idx.test }))?,
            )?;
        }
        Command::Impute { method, data, train, epochs, common } => {
            let schema = read_schema(&schema_path(data.schema.as_deref(), &data.data)?)?;
            let (ds, mask) = load(&data.data, &schema)?;
            let (train_ds, train_mask) = match &train {
                Some(p) => load(p, &schema)?,
                None => (ds.clone(), mask.clone()),
            };
            let dir = out_dir(&common)?;
            let seed = common.seed.unwrap_or(0);
            let start = Instant::now();
            let (imputed, name) = match method {
                MethodArg::Dae => {
                    let mut cfg: DaeConfig = config_section(common.config.as_deref(), "dae")?;
                    cfg.seed = seed;
                    if let Some(e) = epochs {
                        cfg.epochs = e;
                    }
                    let fitted = dae::fit(&train_ds, &train_mask, &cfg).context("dae-fit")?;
                    fitted.save(dir.join("dae_model.json"))?;
                    (fitted.impute(&ds, &mask).context("dae-impute")?, "imputed_dae.csv")
                }
                MethodArg::Mice => {
                    let mut cfg: MiceConfig = config_section(common.config.as_deref(), "mice")?;
                    cfg.seed = seed;
                    let (all, all_mask, offset) = if train.is_some() {
                        (train_ds.vstack(&ds)?, vstack_masks(&train_mask, &mask)?, train_ds.n_rows())
                    } else {
                        (ds.clone(), mask.clone(), 0)
                    };
                    let out = mice::mice_impute(&all, &all_mask, &cfg).context("mice")?;
                    let rows: Vec<usize> = (offset..out.n_rows()).collect();
                    (out.select_rows(&rows), "imputed_mice.csv")
                }
            };
            write_csv(&imputed, &MaskMatrix::empty(imputed.n_rows(), imputed.n_cols()), dir.join(name))?;
            write_schema(&dir, &schema)?;
            eprintln!("imputed {} cells in {:.1}s", mask.count(), start.elapsed().as_secs_f64());
        }
        Command::Score { truth, imputed, masked, schema, common } => {
            let schema = read_schema(&schema_path(schema.as_deref(), &masked)?)?;
            let (truth, _) = load(&truth, &schema)?;
            let (imputed, _) = load(&imputed, &schema)?;
            let (_, mask) = load(&masked, &schema)?;
            let report = metrics::score(&imputed, &truth, &mask).context("score")?;
            let text = score_output(&report, common.format.into())?;
            if let Some(dir) = &common.out {
                let ext = if matches!(common.format, Format::Json) { "json" } else { "csv" };
                write_text(dir.join(format!("score.{ext}")), &text)?;
            }
            print!("{text}");
            eprintln!("accuracy {}", report.accuracy_cell());
        }
        Command::Km { data, common } => {
            let schema = read_schema(&schema_path(data.schema.as_deref(), &data.data)?)?;
            let (ds, mask) = load(&data.data, &schema)?;
            let (oc, tc) = (ds.outcome_col(), ds.time_col());
            let rows: Vec<usize> = (0..ds.n_rows()).filter(|&i| !mask.is_missing(i, oc) && !mask.is_missing(i, tc)).collect();
            let times: Vec<f64> = rows.iter().map(|&i| ds.get(i, tc)).collect();
            let events: Vec<u8> = rows.iter().map(|&i| ds.get(i, oc) as u8).collect();
            let curve = kaplan_meier(&times, &events).context("km")?;
            let band = km_confidence_band(&curve, 0.95).context("km")?;
            let median = median_survival(&curve, &band);
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir)?;
                write_curve_csv(&curve, &band, dir.join("km_curve.csv"))?;
            }
            match OutputFormat::from(common.format) {
                OutputFormat::Json => print!("{}", to_json_pretty(&median)?),
                OutputFormat::Csv => {
                    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                    print!("n,median,lo,hi\n{},{},{},{}\n", rows.len(), f(median.median), f(median.lo), f(median.hi));
                }
            }
        }
        Command::Run { common } => {
            let path = common.config.as_ref().ok_or_else(|| anyhow!("run needs --config"))?;
            let mut cfg = ExperimentConfig::from_file(path)?;
            if let Some(seed) = common.seed {
                cfg = cfg.with_seed(seed);
            }
            if let Some(out) = &common.out {
                cfg.output_dir = Some(out.clone());
            }
            let records = run_experiment(&cfg)?;
            for r in &records {
                eprintln!("{} {}: {:.2}s", r.experiment_id, r.method, r.wall_time_secs);
            }
            let rows: Vec<TableRow> = records.iter().filter(|r| r.method != Method::None).map(TableRow::from_record).collect();
            print!("{}", render_table(&rows, common.format.into())?);
            if let Some(m) = records.iter().find_map(|r| r.medians.as_ref()) {
                eprintln!(
                    "median survival: original {} | dae {} | mice {} | complete-case {}",
                    m.original.format(2),
                    m.dae.map(|e| e.format(2)).unwrap_or_else(|| "-".into()),
                    m.mice.map(|e| e.format(2)).unwrap_or_else(|| "-".into()),
                    m.complete_case.format(2)
                );
            }
        }
        Command::Suite { common } => {
            let path = common.config.as_ref().ok_or_else(|| anyhow!("suite needs --config"))?;
            let mut suite = SuiteConfig::from_file(path)?;
            if let Some(seed) = common.seed {
                suite.seed = seed;
            }
            let out = common.out.clone().or_else(|| suite.output_dir.clone());
            let start = Instant::now();
            let rows = run_suite(&suite.expand()?, out.as_deref())?;
            print!("{}", render_table(&rows, common.format.into())?);
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            eprintln!("{} rows ({failed} failed) in {:.1}s", rows.len(), start.elapsed().as_secs_f64());
        }
    }
    Ok(())
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{stage}]: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
