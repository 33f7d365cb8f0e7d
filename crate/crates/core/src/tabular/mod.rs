//! Column-typed tabular data with a separate missingness mask.
//!
//! Missing cells never carry NaN. A [`Dataset`] stores a placeholder (0.0)
//! in missing positions and the paired [`MaskMatrix`] says which cells are
//! missing.

mod io;
mod split;
mod transform;

pub use io::{load_csv, write_csv, write_csv_with_token, DEFAULT_MISSING_TOKEN};
pub use split::{split_indices, split_train_test, SplitIndices};
pub use transform::{EncodingBlock, EncodingMap, ScalerState};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Binary,
    Categorical(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    #[default]
    Feature,
    Outcome,
    #[serde(rename = "time")]
    TimeToOutcome,
    PatientId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind, role: ColumnRole) -> Self {
        Self {
            name: name.into(),
            kind,
            role,
        }
    }

    pub fn feature(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self::new(name, kind, ColumnRole::Feature)
    }

    /// Checks one observed value against this column's kind.
    pub fn validate_value(&self, value: f64) -> std::result::Result<(), String> {
        if !value.is_finite() {
            return Err(format!("non-finite value {value}"));
        }
        match self.kind {
            ColumnKind::Continuous => Ok(()),
            ColumnKind::Binary => {
                if value == 0.0 || value == 1.0 {
                    Ok(())
                } else {
                    Err(format!("binary column holds {value}, expected 0 or 1"))
                }
            }
            ColumnKind::Categorical(cardinality) => {
                if value.fract() == 0.0 && value >= 0.0 && (value as usize) < cardinality {
                    Ok(())
                } else {
                    Err(format!(
                        "category code {value} outside [0, {cardinality})"
                    ))
                }
            }
        }
    }
}

/// Validates the role constraints of a schema: one outcome, one time, at most
/// one patient id, unique names.
pub fn validate_schema(schema: &[ColumnSpec]) -> Result<()> {
    let count = |role: ColumnRole| schema.iter().filter(|c| c.role == role).count();
    if count(ColumnRole::Outcome) != 1 {
        return Err(Error::Schema(format!(
            "expected exactly one outcome column, found {}",
            count(ColumnRole::Outcome)
        )));
    }
    if count(ColumnRole::TimeToOutcome) != 1 {
        return Err(Error::Schema(format!(
            "expected exactly one time-to-outcome column, found {}",
            count(ColumnRole::TimeToOutcome)
        )));
    }
    if count(ColumnRole::PatientId) > 1 {
        return Err(Error::Schema("more than one patient id column".into()));
    }
    let outcome = schema.iter().find(|c| c.role == ColumnRole::Outcome).unwrap();
    if outcome.kind != ColumnKind::Binary {
        return Err(Error::Schema(format!(
            "outcome column '{}' must be binary",
            outcome.name
        )));
    }
    let time = schema
        .iter()
        .find(|c| c.role == ColumnRole::TimeToOutcome)
        .unwrap();
    if time.kind != ColumnKind::Continuous {
        return Err(Error::Schema(format!(
            "time column '{}' must be continuous",
            time.name
        )));
    }
    for (i, c) in schema.iter().enumerate() {
        if schema[..i].iter().any(|o| o.name == c.name) {
            return Err(Error::Schema(format!("duplicate column name '{}'", c.name)));
        }
        if let ColumnKind::Categorical(0) = c.kind {
            return Err(Error::Schema(format!(
                "categorical column '{}' has zero cardinality",
                c.name
            )));
        }
    }
    Ok(())
}

/// Boolean per-cell missingness indicator (`true` = missing).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    bits: Array2<bool>,
}

impl MaskMatrix {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        Self {
            bits: Array2::from_elem((n_rows, n_cols), false),
        }
    }

    pub fn from_bits(bits: Array2<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &Array2<bool> {
        &self.bits
    }

    pub fn shape(&self) -> (usize, usize) {
        self.bits.dim()
    }

    pub fn n_rows(&self) -> usize {
        self.bits.nrows()
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.bits[[row, col]]
    }

    pub fn set(&mut self, row: usize, col: usize, missing: bool) {
        self.bits[[row, col]] = missing;
    }

    pub fn row_has_missing(&self, row: usize) -> bool {
        self.bits.row(row).iter().any(|&b| b)
    }

    pub fn column_missing_count(&self, col: usize) -> usize {
        self.bits.column(col).iter().filter(|&&b| b).count()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Indices of rows with no missing cell.
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&i| !self.row_has_missing(i))
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> MaskMatrix {
        MaskMatrix {
            bits: self.bits.select(Axis(0), rows),
        }
    }
}

/// An n×d matrix of reals with a typed schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<ColumnSpec>,
    values: Array2<f64>,
}

impl Dataset {
    /// Builds a fully observed dataset; every cell is validated.
    pub fn new(schema: Vec<ColumnSpec>, values: Array2<f64>) -> Result<Self> {
        let mask = MaskMatrix::empty(values.nrows(), values.ncols());
        Self::with_mask(schema, values, &mask)
    }

    /// Builds a dataset whose missing cells are given by `mask`; only observed
    /// cells are validated.
    pub fn with_mask(schema: Vec<ColumnSpec>, values: Array2<f64>, mask: &MaskMatrix) -> Result<Self> {
        validate_schema(&schema)?;
        if values.ncols() != schema.len() {
            return Err(Error::Shape(format!(
                "{} value columns for {} schema columns",
                values.ncols(),
                schema.len()
            )));
        }
        if mask.shape() != values.dim() {
            return Err(Error::Shape(format!(
                "mask shape {:?} does not match data shape {:?}",
                mask.shape(),
                values.dim()
            )));
        }
        for ((row, col), &v) in values.indexed_iter() {
            if mask.is_missing(row, col) {
                continue;
            }
            schema[col]
                .validate_value(v)
                .map_err(|message| Error::InvalidCell {
                    row: row + 1,
                    column: schema[col].name.clone(),
                    message,
                })?;
        }
        Ok(Self { schema, values })
    }

    pub fn schema(&self) -> &[ColumnSpec] {
        &self.schema
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    fn role_index(&self, role: ColumnRole) -> Option<usize> {
        self.schema.iter().position(|c| c.role == role)
    }

    pub fn outcome_col(&self) -> usize {
        self.role_index(ColumnRole::Outcome)
            .expect("validated schema has an outcome column")
    }

    pub fn time_col(&self) -> usize {
        self.role_index(ColumnRole::TimeToOutcome)
            .expect("validated schema has a time column")
    }

    pub fn patient_col(&self) -> Option<usize> {
        self.role_index(ColumnRole::PatientId)
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        self.values.column(col).to_vec()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            values: self.values.select(Axis(0), rows),
        }
    }

    /// Stacks `other` below `self`. Schemas must be identical.
    pub fn vstack(&self, other: &Dataset) -> Result<Dataset> {
        if self.schema != other.schema {
            return Err(Error::Schema("cannot stack datasets with different schemas".into()));
        }
        let values = ndarray::concatenate(Axis(0), &[self.values.view(), other.values.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Dataset {
            schema: self.schema.clone(),
            values,
        })
    }

    #[cfg(test)]
    pub(crate) fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }
}

pub fn vstack_masks(a: &MaskMatrix, b: &MaskMatrix) -> Result<MaskMatrix> {
    let bits = ndarray::concatenate(Axis(0), &[a.bits.view(), b.bits.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(MaskMatrix { bits })
}
