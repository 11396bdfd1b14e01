//! Heterogeneous tables: typed columns, optional missing cells, dense labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::schema::{ColumnKind, ColumnSchema, SchemaSidecar};
use crate::error::{Error, Result};

/// One cell value; `None` marks a missing value.
pub type Cell = Option<CellValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellValue {
    Num(f64),
    Cat(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub schema: Vec<ColumnSchema>,
    /// N rows of c+r cells, in schema order.
    pub rows: Vec<Vec<Cell>>,
    /// Dense labels in 0..n_classes, indexed by first appearance.
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// Original label strings, by dense index.
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    /// Row indices per class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.n_classes];
        for &y in &self.labels {
            out[y] += 1;
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Empty(format!("dataset {:?} has no rows", self.name)));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.schema.len() {
                return Err(Error::Data(format!(
                    "row {} has {} cells for {} columns",
                    i,
                    row.len(),
                    self.schema.len()
                )));
            }
        }
        if self.labels.len() != self.rows.len() {
            return Err(Error::Data("label count differs from row count".into()));
        }
        if self.labels.iter().any(|&y| y >= self.n_classes) {
            return Err(Error::Data("label out of range".into()));
        }
        Ok(())
    }
}

/// Whether a raw CSV field denotes a missing value: empty or a literal "?"
/// after trimming surrounding whitespace.
fn is_missing_marker(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t == "?"
}

/// Loads a dataset from an RFC-4180 CSV with a header row, guided by a schema
/// sidecar. Sidecar columns missing from the CSV are an error; CSV columns the
/// sidecar does not mention are ignored.
pub fn load_csv(csv_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<Dataset> {
    let sidecar = SchemaSidecar::load(sidecar_path)?;
    load_csv_with_sidecar(csv_path, &sidecar)
}

pub fn load_csv_with_sidecar(csv_path: impl AsRef<Path>, sidecar: &SchemaSidecar) -> Result<Dataset> {
    let csv_path = csv_path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(csv_path)?;

    let headers = reader.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!(
                "column {name:?} declared in sidecar but absent from {csv_path:?}"
            ))
        })
    };
    let label_idx = position(&sidecar.label)?;
    let col_idx: Vec<usize> = sidecar
        .columns
        .iter()
        .map(|c| position(&c.name))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let mut cells = Vec::with_capacity(sidecar.columns.len());
        for (schema, &idx) in sidecar.columns.iter().zip(&col_idx) {
            let field = record.get(idx).unwrap_or("");
            if is_missing_marker(field) {
                cells.push(None);
                continue;
            }
            match schema.kind {
                ColumnKind::Numerical => {
                    let v: f64 = field.trim().parse().map_err(|_| {
                        Error::Data(format!(
                            "row {}: non-numeric value {:?} in numerical column {:?}",
                            row_no + 1,
                            field,
                            schema.name
                        ))
                    })?;
                    cells.push(Some(CellValue::Num(v)));
                }
                ColumnKind::Categorical => {
                    cells.push(Some(CellValue::Cat(field.trim().to_string())));
                }
            }
        }
        let label_field = record.get(label_idx).unwrap_or("").trim().to_string();
        if is_missing_marker(&label_field) {
            return Err(Error::Data(format!("row {}: missing label", row_no + 1)));
        }
        let y = match label_names.iter().position(|l| *l == label_field) {
            Some(y) => y,
            None => {
                label_names.push(label_field);
                label_names.len() - 1
            }
        };
        labels.push(y);
        rows.push(cells);
    }

    let name = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let ds = Dataset {
        name,
        schema: sidecar.columns.clone(),
        rows,
        labels,
        n_classes: label_names.len(),
        label_names,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes a dataset back out as CSV plus sidecar, in the same dialect
/// `load_csv` accepts (missing cells become empty fields).
pub fn write_csv(
    ds: &Dataset,
    csv_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
    label_column: &str,
) -> Result<()> {
    let sidecar = SchemaSidecar {
        label: label_column.to_string(),
        columns: ds.schema.clone(),
    };
    sidecar.validate()?;
    sidecar.save(sidecar_path)?;

    let mut writer = csv::Writer::from_path(csv_path.as_ref())?;
    let mut header: Vec<&str> = ds.schema.iter().map(|c| c.name.as_str()).collect();
    header.push(label_column);
    writer.write_record(&header)?;
    for (row, &y) in ds.rows.iter().zip(&ds.labels) {
        let mut record: Vec<String> = Vec::with_capacity(row.len() + 1);
        for cell in row {
            record.push(match cell {
                None => String::new(),
                Some(CellValue::Num(v)) => format!("{v}"),
                Some(CellValue::Cat(s)) => s.clone(),
            });
        }
        record.push(ds.label_names[y].clone());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &std::path::Path, csv: &str, schema: &str) -> (std::path::PathBuf, std::path::PathBuf) {
        let c = dir.join("data.csv");
        let s = dir.join("data.schema.json");
        std::fs::write(&c, csv).unwrap();
        std::fs::write(&s, schema).unwrap();
        (c, s)
    }

    const SCHEMA: &str = r#"{
        "label": "target",
        "columns": [
            {"name": "age", "kind": "numerical"},
            {"name": "color", "kind": "categorical"}
        ]
    }"#;

    #[test]
    fn loads_small_mixed_table() {
        let dir = tempfile::tempdir().unwrap();
        let (c, s) = write_files(
            dir.path(),
            "age,color,target\n1.5,red,yes\n2.0,blue,no\n3.5,red,yes\n",
            SCHEMA,
        );
        let ds = load_csv(&c, &s).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.n_classes, 2);
        assert_eq!(ds.labels, vec![0, 1, 0]); // first-appearance indexing
        assert_eq!(ds.label_names, vec!["yes", "no"]);
    }

    #[test]
    fn question_mark_in_numeric_cell_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        let (c, s) = write_files(
            dir.path(),
            "age,color,target\n?,red,yes\n2.0,blue,no\n,blue,no\n",
            SCHEMA,
        );
        let ds = load_csv(&c, &s).unwrap();
        assert_eq!(ds.rows[0][0], None);
        assert_eq!(ds.rows[2][0], None);
        assert_eq!(ds.rows[1][0], Some(CellValue::Num(2.0)));
    }

    #[test]
    fn non_numeric_in_numeric_column_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (c, s) = write_files(
            dir.path(),
            "age,color,target\nabc,red,yes\n",
            SCHEMA,
        );
        assert!(matches!(load_csv(&c, &s), Err(Error::Data(_))));
    }

    #[test]
    fn unknown_sidecar_column_errors() {
        let dir = tempfile::tempdir().unwrap();
        let schema = r#"{
            "label": "target",
            "columns": [{"name": "height", "kind": "numerical"}]
        }"#;
        let (c, s) = write_files(dir.path(), "age,target\n1,yes\n", schema);
        assert!(matches!(load_csv(&c, &s), Err(Error::Data(_))));
    }

    #[test]
    fn empty_dataset_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (c, s) = write_files(dir.path(), "age,color,target\n", SCHEMA);
        assert!(matches!(load_csv(&c, &s), Err(Error::Empty(_))));
    }

    #[test]
    fn csv_round_trip_preserves_content() {
        let dir = tempfile::tempdir().unwrap();
        let (c, s) = write_files(
            dir.path(),
            "age,color,target\n1.5,red,yes\n,?,no\n3.25,green,yes\n",
            SCHEMA,
        );
        let ds = load_csv(&c, &s).unwrap();
        let c2 = dir.path().join("out.csv");
        let s2 = dir.path().join("out.schema.json");
        write_csv(&ds, &c2, &s2, "target").unwrap();
        let ds2 = load_csv(&c2, &s2).unwrap();
        assert_eq!(ds.rows, ds2.rows);
        assert_eq!(ds.labels, ds2.labels);
    }
}
