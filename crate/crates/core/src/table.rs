//! Column-labeled data tables read from CSV.
//!
//! Columns are inferred numeric when every cell parses as a finite float with
//! a `.` decimal separator; otherwise they are categorical. Raw cell text is
//! retained so categorical levels (including numeric-looking cluster labels)
//! keep their exact spelling. Empty cells and the literal `NA` are treated as
//! missing values and abort ingestion with a row/column diagnostic.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DataTable {
    names: Vec<String>,
    /// Column-major raw cell text.
    cells: Vec<Vec<String>>,
    /// Parsed values for columns where every cell is a finite float.
    numeric: Vec<Option<Vec<f64>>>,
    n_rows: usize,
}

impl DataTable {
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let names: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut cells: Vec<Vec<String>> = vec![Vec::new(); names.len()];
        let mut n_rows = 0usize;
        for record in rdr.records() {
            let record = record?;
            n_rows += 1;
            if record.len() != names.len() {
                return Err(Error::Csv(csv::Error::from(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("row {n_rows} has {} fields, expected {}", record.len(), names.len()),
                ))));
            }
            for (j, field) in record.iter().enumerate() {
                let field = field.trim();
                if field.is_empty() || field == "NA" {
                    return Err(Error::MissingValue { row: n_rows, column: names[j].clone() });
                }
                cells[j].push(field.to_string());
            }
        }
        let numeric = cells.iter().map(|col| parse_numeric(col)).collect();
        Ok(DataTable { names, cells, numeric, n_rows })
    }

    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<String>>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |c| c.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n_rows {
                return Err(Error::DimensionMismatch {
                    context: format!("column `{}` has {} rows, expected {}", names[j], col.len(), n_rows),
                });
            }
        }
        let numeric = columns.iter().map(|col| parse_numeric(col)).collect();
        Ok(DataTable { names, cells: columns, numeric, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingColumn { name: name.to_string() })
    }

    pub fn is_numeric(&self, index: usize) -> bool {
        self.numeric[index].is_some()
    }

    /// Parsed values of a numeric column, or an error naming the column.
    pub fn numeric_column(&self, index: usize) -> Result<&[f64]> {
        self.numeric[index].as_deref().ok_or_else(|| Error::InvalidTerm {
            message: format!("column `{}` is categorical where a numeric column is required", self.names[index]),
        })
    }

    /// Raw cell text; this is the categorical view of any column.
    pub fn raw_column(&self, index: usize) -> &[String] {
        &self.cells[index]
    }

    /// Sorted distinct levels of a column viewed categorically.
    pub fn levels(&self, index: usize) -> Vec<String> {
        let mut levels: Vec<String> = self.cells[index].to_vec();
        levels.sort();
        levels.dedup();
        levels
    }
}

fn parse_numeric(col: &[String]) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(col.len());
    for cell in col {
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ => return None,
        }
    }
    Some(out)
}
