//! CSV readers and writers for the pipeline's tabular interchange.
//!
//! All floating-point output uses 17-significant-digit scientific notation
//! so values round-trip exactly.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::errors::{CliError, CliResult};

/// Round-trip float formatting (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Reads a CSV whose columns are all numeric.
pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if record.len() != header.len() {
            return Err(CliError::Validation(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                line + 2,
                record.len(),
                header.len()
            )));
        }
        let mut row = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                CliError::Validation(format!(
                    "{}: row {}, column {:?}: {:?} is not a number",
                    path.display(),
                    line + 2,
                    header[col],
                    field
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::Validation(format!(
                    "{}: row {}, column {:?}: non-finite value",
                    path.display(),
                    line + 2,
                    header[col]
                )));
            }
            row.push(value);
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Validates a `x1..xd` prefix and returns d.
fn covariate_width(header: &[String], path: &Path) -> CliResult<usize> {
    let mut d = 0;
    while d < header.len() && header[d] == format!("x{}", d + 1) {
        d += 1;
    }
    if d == 0 {
        return Err(CliError::Validation(format!(
            "{}: header must start with covariate columns named x1, x2, ...; got {:?}",
            path.display(),
            header.first().map(String::as_str).unwrap_or("")
        )));
    }
    Ok(d)
}

fn to_matrix(rows: &[Vec<f64>], cols: std::ops::Range<usize>) -> Array2<f64> {
    let width = cols.len();
    let mut m = Array2::zeros((rows.len(), width));
    for (i, row) in rows.iter().enumerate() {
        for (k, c) in cols.clone().enumerate() {
            m[[i, k]] = row[c];
        }
    }
    m
}

/// Training data: covariates x1..xd plus a response column named `y`.
pub fn read_train(path: &Path) -> CliResult<(Array2<f64>, Array1<f64>)> {
    let table = read_table(path)?;
    let d = covariate_width(&table.header, path)?;
    if table.header.len() != d + 1 || table.header[d] != "y" {
        return Err(CliError::Validation(format!(
            "{}: expected columns x1..x{d},y; missing column \"y\"",
            path.display()
        )));
    }
    if table.rows.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let xs = to_matrix(&table.rows, 0..d);
    let y = Array1::from_iter(table.rows.iter().map(|r| r[d]));
    Ok((xs, y))
}

/// Pilot data: covariates x1..xd plus a `pilot` column.
pub fn read_pilot(path: &Path) -> CliResult<(Array2<f64>, Array1<f64>)> {
    let table = read_table(path)?;
    let d = covariate_width(&table.header, path)?;
    if table.header.len() != d + 1 || table.header[d] != "pilot" {
        return Err(CliError::Validation(format!(
            "{}: expected columns x1..x{d},pilot; missing column \"pilot\"",
            path.display()
        )));
    }
    if table.rows.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let xs = to_matrix(&table.rows, 0..d);
    let pilot = Array1::from_iter(table.rows.iter().map(|r| r[d]));
    Ok((xs, pilot))
}

/// Target points: covariates x1..xd only. May be empty.
pub fn read_targets(path: &Path, expected_d: usize) -> CliResult<Array2<f64>> {
    let table = read_table(path)?;
    let d = covariate_width(&table.header, path)?;
    if table.header.len() != d {
        return Err(CliError::Validation(format!(
            "{}: expected only covariate columns x1..x{d}, got extra column {:?}",
            path.display(),
            table.header[d]
        )));
    }
    if d != expected_d {
        return Err(CliError::Validation(format!(
            "{}: targets have dimension {d}, data has dimension {expected_d}",
            path.display()
        )));
    }
    Ok(to_matrix(&table.rows, 0..d))
}

/// Writes a CSV whose cells are formatted with `fmt_f64`, except columns
/// listed in `bool_columns` which are rendered true/false.
pub struct CsvWriter {
    writer: csv::Writer<std::fs::File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<Self> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        writer
            .write_record(header)
            .map_err(|e| CliError::Compute(e.to_string()))?;
        Ok(Self { writer })
    }

    pub fn write_row(&mut self, cells: &[CsvCell]) -> CliResult<()> {
        let rendered: Vec<String> = cells
            .iter()
            .map(|c| match c {
                CsvCell::Float(v) => fmt_f64(*v),
                CsvCell::Bool(b) => b.to_string(),
                CsvCell::Int(i) => i.to_string(),
                CsvCell::Text(s) => s.clone(),
            })
            .collect();
        self.writer
            .write_record(&rendered)
            .map_err(|e| CliError::Compute(e.to_string()))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.writer
            .flush()
            .map_err(|e| CliError::Compute(e.to_string()))
    }
}

pub enum CsvCell {
    Float(f64),
    Bool(bool),
    Int(i64),
    Text(String),
}

/// Header names x1..xd for a covariate block.
pub fn covariate_header(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}
