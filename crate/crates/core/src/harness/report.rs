//! Result records and their CSV/JSON renderings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Method;
use crate::error::{Error, Result};
use crate::metrics::ScoreReport;
use crate::missingness::Mechanism;
use crate::survival::MedianEstimate;

/// Median survival of the merged dataset under each treatment of the lost rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianSummary {
    pub original: MedianEstimate,
    pub dae: Option<MedianEstimate>,
    pub mice: Option<MedianEstimate>,
    /// Rows with any missing cell dropped.
    pub complete_case: MedianEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment_id: String,
    pub dataset: String,
    pub mechanism: Mechanism,
    pub proportion: f64,
    pub method: Method,
    pub score: Option<ScoreReport>,
    pub medians: Option<MedianSummary>,
    pub seed: u64,
    pub fingerprint: String,
    /// Kept out of report files so that reruns are byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown format '{other}' (expected csv or json)"))),
        }
    }
}

/// One row of a results table: the score columns plus identifying knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub experiment_id: String,
    pub method: Method,
    pub dataset: String,
    pub mechanism: Mechanism,
    pub proportion: f64,
    pub accuracy: Option<f64>,
    pub acc_lo: Option<f64>,
    pub acc_hi: Option<f64>,
    pub rmse: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub n_scored: Option<usize>,
    pub seed: u64,
    pub fingerprint: String,
    pub error: Option<String>,
}

impl TableRow {
    pub fn from_record(r: &ResultRecord) -> Self {
        let s = r.score.as_ref();
        Self {
            experiment_id: r.experiment_id.clone(),
            method: r.method,
            dataset: r.dataset.clone(),
            mechanism: r.mechanism,
            proportion: r.proportion,
            accuracy: s.map(|s| s.accuracy),
            acc_lo: s.map(|s| s.acc_lo),
            acc_hi: s.map(|s| s.acc_hi),
            rmse: s.map(|s| s.rmse),
            sensitivity: s.and_then(|s| s.sensitivity),
            specificity: s.and_then(|s| s.specificity),
            n_scored: s.map(|s| s.n_scored),
            seed: r.seed,
            fingerprint: r.fingerprint.clone(),
            error: None,
        }
    }
}

const TABLE_HEADER: [&str; 15] = [
    "experiment_id",
    "dataset",
    "mechanism",
    "proportion",
    "method",
    "accuracy",
    "acc_lo",
    "acc_hi",
    "rmse",
    "sensitivity",
    "specificity",
    "n_scored",
    "seed",
    "fingerprint",
    "error",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn table_csv(rows: &[TableRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TABLE_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment_id.clone(),
            r.dataset.clone(),
            r.mechanism.to_string(),
            r.proportion.to_string(),
            r.method.to_string(),
            opt(r.accuracy),
            opt(r.acc_lo),
            opt(r.acc_hi),
            opt(r.rmse),
            opt(r.sensitivity),
            opt(r.specificity),
            opt(r.n_scored),
            r.seed.to_string(),
            r.fingerprint.clone(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Config(e.to_string()))
}

pub fn render_table(rows: &[TableRow], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => table_csv(rows),
        OutputFormat::Json => to_json_pretty(&rows),
    }
}

/// Median table: one row per variant (`original`, `dae`, `mice`,
/// `complete_case`).
pub fn medians_csv(m: &MedianSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "median", "lo", "hi", "cell"])?;
    let mut row = |name: &str, e: &MedianEstimate| {
        w.write_record([name.to_string(), opt(e.median), opt(e.lo), opt(e.hi), e.format(1)])
    };
    row("original", &m.original)?;
    if let Some(e) = &m.dae {
        row("dae", e)?;
    }
    if let Some(e) = &m.mice {
        row("mice", e)?;
    }
    row("complete_case", &m.complete_case)?;
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, acc: Option<f64>) -> TableRow {
        TableRow {
            experiment_id: "S1-CAR-20".into(),
            method,
            dataset: "S1".into(),
            mechanism: Mechanism::CAR,
            proportion: 0.2,
            accuracy: acc,
            acc_lo: acc,
            acc_hi: acc,
            rmse: Some(1.5),
            sensitivity: None,
            specificity: Some(1.0),
            n_scored: Some(10),
            seed: 1,
            fingerprint: "ab".into(),
            error: None,
        }
    }

    #[test]
    fn csv_layout() {
        let text = table_csv(&[row(Method::Dae, Some(0.9)), row(Method::Mice, None)]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("experiment_id,dataset,mechanism,proportion,method,accuracy"));
        assert_eq!(lines[1], "S1-CAR-20,S1,CAR,0.2,DAE,0.9,0.9,0.9,1.5,,1,10,1,ab,");
        assert!(lines[2].contains(",MICE,,,,1.5,"));
    }

    #[test]
    fn json_roundtrip() {
        let rows = vec![row(Method::Dae, Some(0.25))];
        let back: Vec<TableRow> = serde_json::from_str(&render_table(&rows, OutputFormat::Json).unwrap()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn format_parsing() {
        assert_eq!("JSON".parse::<OutputFormat>().unwrap(), OutputFormat::Json);
        assert!("xml".parse::<OutputFormat>().is_err());
    }
}
