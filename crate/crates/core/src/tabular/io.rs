use std::fs::File;
use std::path::Path;

use ndarray::Array2;

use super::{ColumnSpec, Dataset, MaskMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_MISSING_TOKEN: &str = "?";

/// Reads a headed CSV. Cells equal to `missing_token` become masked; every
/// other cell must parse as a real and satisfy its column kind.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &[ColumnSpec],
    missing_token: &str,
) -> Result<(Dataset, MaskMatrix)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let expected: Vec<&str> = schema.iter().map(|c| c.name.as_str()).collect();
    if names != expected {
        return Err(Error::Schema(format!(
            "header {names:?} does not match schema {expected:?}"
        )));
    }

    let d = schema.len();
    let mut values = Vec::new();
    let mut bits = Vec::new();
    let mut n = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != d {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {d} cells, found {}", record.len()),
            });
        }
        for (cell, spec) in record.iter().zip(schema) {
            if cell == missing_token {
                values.push(0.0);
                bits.push(true);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: spec.name.clone(),
                message: format!("cannot parse '{cell}' as a number"),
            })?;
            spec.validate_value(v).map_err(|message| Error::InvalidCell {
                row,
                column: spec.name.clone(),
                message,
            })?;
            values.push(v);
            bits.push(false);
        }
        n += 1;
    }

    let values = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Shape(e.to_string()))?;
    let mask = MaskMatrix::from_bits(
        Array2::from_shape_vec((n, d), bits).map_err(|e| Error::Shape(e.to_string()))?,
    );
    let dataset = Dataset::with_mask(schema.to_vec(), values, &mask)?;
    Ok((dataset, mask))
}

pub fn write_csv(dataset: &Dataset, mask: &MaskMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_csv_with_token(dataset, mask, path, DEFAULT_MISSING_TOKEN)
}

/// Writes reals in shortest round-trip form, so reloading is bit-identical.
pub fn write_csv_with_token(
    dataset: &Dataset,
    mask: &MaskMatrix,
    path: impl AsRef<Path>,
    missing_token: &str,
) -> Result<()> {
    let path = path.as_ref();
    if mask.shape() != dataset.values().dim() {
        return Err(Error::Shape(format!(
            "mask shape {:?} does not match data shape {:?}",
            mask.shape(),
            dataset.values().dim()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(dataset.schema().iter().map(|c| c.name.as_str()))?;
    let mut row_buf: Vec<String> = Vec::with_capacity(dataset.n_cols());
    for (i, row) in dataset.values().rows().into_iter().enumerate() {
        row_buf.clear();
        for (j, &v) in row.iter().enumerate() {
            if mask.is_missing(i, j) {
                row_buf.push(missing_token.to_string());
            } else {
                row_buf.push(format!("{v}"));
            }
        }
        writer.write_record(&row_buf)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{ColumnKind, ColumnRole};
    use std::io::Write;

    fn schema() -> Vec<ColumnSpec> {
        vec![
            ColumnSpec::feature("id", ColumnKind::Continuous),
            ColumnSpec::feature("bp", ColumnKind::Continuous),
            ColumnSpec::new("time", ColumnKind::Continuous, ColumnRole::TimeToOutcome),
            ColumnSpec::new("outcome", ColumnKind::Binary, ColumnRole::Outcome),
        ]
    }

    fn write_file(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let path = dir.path().join("data.csv");
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn question_marks_become_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "id,bp,time,outcome\n1,120,400,1\n2,135,1200,0\n3,128,?,?\n4,141,?,?\n",
        );
        let (ds, mask) = load_csv(&path, &schema(), "?").unwrap();
        assert_eq!(ds.n_rows(), 4);
        assert_eq!(mask.count(), 4);
        for r in [2, 3] {
            assert!(mask.is_missing(r, 2) && mask.is_missing(r, 3));
        }
    }

    #[test]
    fn no_tokens_empty_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "id,bp,time,outcome\n1,120,400,1\n");
        let (_, mask) = load_csv(&path, &schema(), "?").unwrap();
        assert!(mask.is_empty());
    }

    #[test]
    fn invalid_binary_names_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "id,bp,time,outcome\n1,120,400,1\n2,110,30,2\n");
        match load_csv(&path, &schema(), "?").unwrap_err() {
            Error::InvalidCell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "outcome");
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn unparseable_cell_reports_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "id,bp,time,outcome\n1,abc,400,1\n");
        match load_csv(&path, &schema(), "?").unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!((row, column.as_str()), (1, "bp"));
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn header_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "id,sbp,time,outcome\n1,120,400,1\n");
        assert!(matches!(load_csv(&path, &schema(), "?"), Err(Error::Schema(_))));
    }

    #[test]
    fn zero_rows_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(schema(), Array2::zeros((0, 4))).unwrap();
        let path = dir.path().join("empty.csv");
        write_csv(&ds, &MaskMatrix::empty(0, 4), &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "id,bp,time,outcome\n");
    }

    #[test]
    fn masked_cell_written_as_token() {
        let dir = tempfile::tempdir().unwrap();
        let mut mask = MaskMatrix::empty(1, 4);
        mask.set(0, 2, true);
        mask.set(0, 3, true);
        let ds = Dataset::with_mask(schema(), ndarray::array![[1.0, 0.1, 0.0, 0.0]], &mask).unwrap();
        let path = dir.path().join("m.csv");
        write_csv(&ds, &mask, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "id,bp,time,outcome\n1,0.1,?,?\n"
        );
    }
}
