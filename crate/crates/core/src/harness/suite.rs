//! Runs a list of experiments into one consolidated table.

use std::path::Path;

use super::config::{ExperimentConfig, Method};
use super::experiment::run_experiment;
use super::report::{render_table, write_text, OutputFormat, TableRow};
use crate::error::{Error, Result};

/// One row per (experiment, method). A failing experiment yields rows with
/// `error` set and the suite moves on.
pub fn run_suite(configs: &[ExperimentConfig], output_dir: Option<&Path>) -> Result<Vec<TableRow>> {
    if configs.is_empty() {
        return Err(Error::Config("suite contains no experiments".into()));
    }
    let mut rows = Vec::new();
    for cfg in configs {
        let mut cfg = cfg.clone();
        if let Some(dir) = output_dir {
            cfg.output_dir = Some(dir.join(cfg.experiment_id()));
        }
        match run_experiment(&cfg) {
            Ok(records) => rows.extend(records.iter().filter(|r| r.method != Method::None).map(TableRow::from_record)),
            Err(e) => {
                for &method in &cfg.methods {
                    rows.push(TableRow {
                        experiment_id: cfg.experiment_id(),
                        method,
                        dataset: cfg.data.label(),
                        mechanism: cfg.loss.mechanism,
                        proportion: cfg.loss.proportion,
                        accuracy: None,
                        acc_lo: None,
                        acc_hi: None,
                        rmse: None,
                        sensitivity: None,
                        specificity: None,
                        n_scored: None,
                        seed: cfg.seed,
                        fingerprint: cfg.fingerprint().unwrap_or_default(),
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }
    if let Some(dir) = output_dir {
        write_text(dir.join("suite.csv"), &render_table(&rows, OutputFormat::Csv)?)?;
        write_text(dir.join("suite.json"), &render_table(&rows, OutputFormat::Json)?)?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::DataConfig;
    use crate::missingness::LossSpec;

    fn cfg(preset: &str, n: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(DataConfig::preset(preset, Some(n)), LossSpec::car(0.2, 0));
        c.dae.epochs = 1;
        c.dae.batch_size = 64;
        c.with_seed(1)
    }

    #[test]
    fn single_experiment_two_rows() {
        let rows = run_suite(&[cfg("s3", 200)], None).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.error.is_none() && r.accuracy.is_some()));
    }

    #[test]
    fn failures_are_recorded_per_row() {
        let mut bad = cfg("s3", 200);
        bad.mice.k_donors = 100_000;
        let dir = tempfile::tempdir().unwrap();
        let rows = run_suite(&[bad, cfg("s1", 200)], Some(dir.path())).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].error.as_deref().unwrap().contains("mice"));
        assert!(rows[2].error.is_none());
        assert!(dir.path().join("suite.csv").exists());
        assert!(dir.path().join("S1-CAR-20").join("report.csv").exists());
    }

    #[test]
    fn empty_suite_rejected() {
        assert!(run_suite(&[], None).is_err());
    }
}
