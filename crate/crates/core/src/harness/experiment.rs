//! The end-to-end pipeline: load or simulate, induce loss, split, impute,
//! score and optionally analyze survival on the re-merged data.

use std::path::Path;
use std::time::Instant;

use super::config::{Analysis, ExperimentConfig, Method};
use super::report::{medians_csv, table_csv, to_json_pretty, write_text, MedianSummary, ResultRecord, TableRow};
use crate::error::{Error, Result};
use crate::metrics::score;
use crate::missingness::induce_loss_on;
use crate::survival::{kaplan_meier, km_confidence_band, median_survival, write_curve_csv, MedianEstimate};
use crate::tabular::{split_indices, vstack_masks, write_csv, Dataset, MaskMatrix};
use crate::{dae, mice};

fn staged<T>(stage: &str, fingerprint: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: stage.into(),
        fingerprint: fingerprint.into(),
        source: Box::new(e),
    })
}

/// Puts the rows of `train` and `test` back at their original positions.
fn unsplit(train: &Dataset, test: &Dataset, train_idx: &[usize], test_idx: &[usize]) -> Result<Dataset> {
    let mut values = ndarray::Array2::zeros((train_idx.len() + test_idx.len(), train.n_cols()));
    for (part, idx) in [(train, train_idx), (test, test_idx)] {
        for (r, &i) in idx.iter().enumerate() {
            values.row_mut(i).assign(&part.values().row(r));
        }
    }
    Dataset::new(train.schema().to_vec(), values)
}

struct Imputed {
    method: Method,
    /// Full dataset in original row order, when survival analysis needs it.
    merged: Option<Dataset>,
    test: Dataset,
    seconds: f64,
}

fn survival_inputs(ds: &Dataset, rows: impl Iterator<Item = usize>) -> (Vec<f64>, Vec<u8>) {
    let (tc, oc) = (ds.time_col(), ds.outcome_col());
    rows.map(|i| (ds.get(i, tc), ds.get(i, oc) as u8)).unzip()
}

fn km_variant(ds: &Dataset, rows: Vec<usize>, curve_path: Option<&Path>) -> Result<MedianEstimate> {
    let (times, events) = survival_inputs(ds, rows.into_iter());
    let curve = kaplan_meier(&times, &events)?;
    let band = km_confidence_band(&curve, 0.95)?;
    if let Some(p) = curve_path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_curve_csv(&curve, &band, p)?;
    }
    Ok(median_survival(&curve, &band))
}

/// Runs one experiment and, when `output_dir` is set, writes its config
/// snapshot, reports, survival curves and imputed datasets there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let fp = cfg.fingerprint()?;
    let fp = fp.as_str();
    staged("config", fp, cfg.validate())?;
    let out = cfg.output_dir.as_deref();
    let id = cfg.experiment_id();
    let analyses = &cfg.analyses;

    let (truth, base_mask) = staged("load", fp, cfg.data.load(cfg.simulate_seed()))?;
    let (data, mask) = staged("induce", fp, induce_loss_on(&truth, &base_mask, &cfg.loss))?;
    let split = staged(
        "split",
        fp,
        split_indices(&data, cfg.split.train_fraction, cfg.split_seed(), cfg.split.by_patient),
    )?;
    let (train, train_mask) = (data.select_rows(&split.train), mask.select_rows(&split.train));
    let (test, test_mask) = (data.select_rows(&split.test), mask.select_rows(&split.test));
    let test_truth = truth.select_rows(&split.test);
    let want_km = analyses.contains(&Analysis::KaplanMeier);

    let mut imputed = Vec::new();
    for &method in &cfg.methods {
        let start = Instant::now();
        match method {
            Method::Dae => {
                let fitted = staged("dae-fit", fp, dae::fit(&train, &train_mask, &cfg.resolved_dae()))?;
                let test_imp = staged("dae-impute", fp, fitted.impute(&test, &test_mask))?;
                let merged = if want_km {
                    let train_imp = staged("dae-impute", fp, fitted.impute(&train, &train_mask))?;
                    Some(staged("merge", fp, unsplit(&train_imp, &test_imp, &split.train, &split.test))?)
                } else {
                    None
                };
                imputed.push(Imputed { method, merged, test: test_imp, seconds: start.elapsed().as_secs_f64() });
            }
            Method::Mice => {
                let stacked = staged("mice", fp, train.vstack(&test))?;
                let stacked_mask = staged("mice", fp, vstack_masks(&train_mask, &test_mask))?;
                let all = staged("mice", fp, mice::mice_impute(&stacked, &stacked_mask, &cfg.mice))?;
                let n_train = train.n_rows();
                let test_rows: Vec<usize> = (n_train..all.n_rows()).collect();
                let train_rows: Vec<usize> = (0..n_train).collect();
                let test_imp = all.select_rows(&test_rows);
                let merged = if want_km {
                    let train_imp = all.select_rows(&train_rows);
                    Some(staged("merge", fp, unsplit(&train_imp, &test_imp, &split.train, &split.test))?)
                } else {
                    None
                };
                imputed.push(Imputed { method, merged, test: test_imp, seconds: start.elapsed().as_secs_f64() });
            }
            Method::None => {}
        }
    }

    let base_record = |method: Method| ResultRecord {
        experiment_id: id.clone(),
        dataset: cfg.data.label(),
        mechanism: cfg.loss.mechanism,
        proportion: cfg.loss.proportion,
        method,
        score: None,
        medians: None,
        seed: cfg.seed,
        fingerprint: fp.to_string(),
        wall_time_secs: 0.0,
    };

    let mut records = Vec::new();
    for imp in &imputed {
        let mut rec = base_record(imp.method);
        rec.wall_time_secs = imp.seconds;
        if analyses.contains(&Analysis::Score) {
            rec.score = Some(staged("score", fp, score(&imp.test, &test_truth, &test_mask))?);
        }
        records.push(rec);
    }

    if want_km {
        let start = Instant::now();
        let curve = |name: &str| out.map(|d| d.join("km").join(format!("{name}.csv")));
        let all_rows: Vec<usize> = (0..truth.n_rows()).collect();
        let original = staged("km", fp, km_variant(&truth, all_rows.clone(), curve("original").as_deref()))?;
        let (oc, tc) = (data.outcome_col(), data.time_col());
        let observed: Vec<usize> = all_rows
            .iter()
            .copied()
            .filter(|&i| !mask.is_missing(i, oc) && !mask.is_missing(i, tc))
            .collect();
        let complete_case = staged("km", fp, km_variant(&data, observed, curve("complete_case").as_deref()))?;
        let mut summary = MedianSummary { original, dae: None, mice: None, complete_case };
        for imp in &imputed {
            if let Some(merged) = &imp.merged {
                let name = if imp.method == Method::Dae { "dae" } else { "mice" };
                let est = staged("km", fp, km_variant(merged, all_rows.clone(), curve(name).as_deref()))?;
                match imp.method {
                    Method::Dae => summary.dae = Some(est),
                    _ => summary.mice = Some(est),
                }
            }
        }
        let mut rec = base_record(Method::None);
        rec.medians = Some(summary);
        rec.wall_time_secs = start.elapsed().as_secs_f64();
        records.push(rec);
    }

    if let Some(dir) = out {
        staged("write", fp, write_outputs(dir, cfg, fp, &records, &imputed, &test_mask))?;
    }
    Ok(records)
}

fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    fingerprint: &str,
    records: &[ResultRecord],
    imputed: &[Imputed],
    test_mask: &MaskMatrix,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(dir.join("config.toml"), &cfg.snapshot()?)?;
    write_text(dir.join("fingerprint.txt"), &format!("{fingerprint}\n"))?;
    write_text(dir.join("report.json"), &to_json_pretty(&records)?)?;
    let rows: Vec<TableRow> = records.iter().filter(|r| r.method != Method::None).map(TableRow::from_record).collect();
    write_text(dir.join("report.csv"), &table_csv(&rows)?)?;
    if let Some(m) = records.iter().find_map(|r| r.medians.as_ref()) {
        write_text(dir.join("km_medians.csv"), &medians_csv(m)?)?;
    }
    if cfg.analyses.contains(&Analysis::Impute) {
        let sub = dir.join("imputed");
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let empty = MaskMatrix::empty(test_mask.n_rows(), test_mask.shape().1);
        for imp in imputed {
            let name = if imp.method == Method::Dae { "test_dae.csv" } else { "test_mice.csv" };
            write_csv(&imp.test, &empty, sub.join(name))?;
        }
    }
    Ok(())
}
