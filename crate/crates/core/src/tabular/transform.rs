//! Reversible preprocessing: min-max scaling of continuous columns and
//! one-hot expansion of categorical columns.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ColumnKind, ColumnRole, ColumnSpec, Dataset, MaskMatrix};

/// Per-column `(min, max)` for continuous columns, fit on observed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    ranges: Vec<Option<(f64, f64)>>,
}

impl ScalerState {
    pub fn fit(train: &Dataset, mask: &MaskMatrix) -> Self {
        let ranges = train
            .schema()
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                if spec.kind != ColumnKind::Continuous || spec.role == ColumnRole::PatientId {
                    return None;
                }
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in 0..train.n_rows() {
                    if !mask.is_missing(i, j) {
                        let v = train.get(i, j);
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                if lo > hi {
                    // no observed cells; treat as a constant zero column
                    Some((0.0, 0.0))
                } else {
                    Some((lo, hi))
                }
            })
            .collect();
        Self { ranges }
    }

    pub fn range(&self, col: usize) -> Option<(f64, f64)> {
        self.ranges[col]
    }

    pub fn apply_value(&self, col: usize, v: f64) -> f64 {
        match self.ranges[col] {
            Some((lo, hi)) if hi > lo => (v - lo) / (hi - lo),
            Some(_) => 0.0,
            None => v,
        }
    }

    pub fn invert_value(&self, col: usize, v: f64) -> f64 {
        match self.ranges[col] {
            Some((lo, hi)) if hi > lo => v * (hi - lo) + lo,
            Some((lo, _)) => lo,
            None => v,
        }
    }

    /// Scales continuous columns. Values outside the fitted range are not clamped.
    pub fn apply(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for ((_, j), v) in out.indexed_iter_mut() {
            *v = self.apply_value(j, *v);
        }
        out
    }

    pub fn invert(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for ((_, j), v) in out.indexed_iter_mut() {
            *v = self.invert_value(j, *v);
        }
        out
    }
}

/// Where one source column lives in the encoded (wide) matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingBlock {
    pub source: usize,
    pub start: usize,
    pub width: usize,
    pub kind: ColumnKind,
}

/// Maps dataset columns to wide columns. Categorical columns expand to one
/// indicator per category; patient id columns are dropped; everything else is
/// copied through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingMap {
    source_cols: usize,
    blocks: Vec<EncodingBlock>,
    width: usize,
}

impl EncodingMap {
    pub fn from_schema(schema: &[ColumnSpec]) -> Self {
        let mut blocks = Vec::new();
        let mut start = 0;
        for (j, spec) in schema.iter().enumerate() {
            if spec.role == ColumnRole::PatientId {
                continue;
            }
            let width = match spec.kind {
                ColumnKind::Categorical(c) => c,
                _ => 1,
            };
            blocks.push(EncodingBlock {
                source: j,
                start,
                width,
                kind: spec.kind,
            });
            start += width;
        }
        Self {
            source_cols: schema.len(),
            blocks,
            width: start,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn source_cols(&self) -> usize {
        self.source_cols
    }

    pub fn blocks(&self) -> &[EncodingBlock] {
        &self.blocks
    }

    pub fn block_for(&self, source: usize) -> Option<&EncodingBlock> {
        self.blocks.iter().find(|b| b.source == source)
    }

    /// Missing source cells give fully masked blocks holding zeros.
    pub fn encode(&self, values: &Array2<f64>, mask: &MaskMatrix) -> (Array2<f64>, Array2<bool>) {
        let n = values.nrows();
        let mut wide = Array2::zeros((n, self.width));
        let mut wide_mask = Array2::from_elem((n, self.width), false);
        for i in 0..n {
            for b in &self.blocks {
                let missing = mask.is_missing(i, b.source);
                if missing {
                    for k in 0..b.width {
                        wide_mask[[i, b.start + k]] = true;
                    }
                    continue;
                }
                let v = values[[i, b.source]];
                match b.kind {
                    ColumnKind::Categorical(_) => wide[[i, b.start + v as usize]] = 1.0,
                    _ => wide[[i, b.start]] = v,
                }
            }
        }
        (wide, wide_mask)
    }

    /// Inverse of [`encode`](Self::encode). Categorical blocks decode to their
    /// argmax (ties to the lowest index); dropped columns come back as 0.
    pub fn decode(&self, wide: &Array2<f64>) -> Array2<f64> {
        let n = wide.nrows();
        let mut out = Array2::zeros((n, self.source_cols));
        for i in 0..n {
            for b in &self.blocks {
                out[[i, b.source]] = match b.kind {
                    ColumnKind::Categorical(_) => {
                        let row = wide.row(i);
                        argmax_lowest(&row.as_slice().unwrap()[b.start..b.start + b.width]) as f64
                    }
                    _ => wide[[i, b.start]],
                };
            }
        }
        out
    }
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = k;
        }
    }
    best
}
