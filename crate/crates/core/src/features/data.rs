use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::FeatureError;

/// Samples in rows, variables in columns, with the column names that came
/// from the CSV header.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    columns: Vec<String>,
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(columns: Vec<String>, values: DMatrix<f64>) -> Result<Self, FeatureError> {
        if columns.len() != values.ncols() {
            return Err(FeatureError::Shape(format!(
                "{} column names for {} columns",
                columns.len(),
                values.ncols()
            )));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(FeatureError::Shape(format!("duplicate column `{c}`")));
            }
        }
        if let Some((i, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (r, c) = (i % values.nrows(), i / values.nrows());
            return Err(FeatureError::NonFinite(format!(
                "row {}, column `{}`",
                r,
                columns[c]
            )));
        }
        Ok(Self { columns, values })
    }

    pub fn from_rows(columns: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let n = columns.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(FeatureError::Shape(format!(
                "row {i} has {} values, expected {n}",
                r.len()
            )));
        }
        let values = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Self::new(columns, values)
    }

    /// Reads a CSV with a header row and one sample per row.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let ctx = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| FeatureError::Csv(format!("{ctx}: {e}")))?;
        let columns: Vec<String> = reader
            .headers()
            .map_err(|e| FeatureError::Csv(format!("{ctx}: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if columns.is_empty() {
            return Err(FeatureError::Csv(format!("{ctx}: empty header")));
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            // header is line 1
            let line = i + 2;
            let record = record.map_err(|e| FeatureError::Csv(format!("{ctx}:{line}: {e}")))?;
            let row = record
                .iter()
                .enumerate()
                .map(|(j, field)| {
                    field.parse::<f64>().map_err(|_| {
                        FeatureError::Csv(format!(
                            "{ctx}:{line}: column `{}`: cannot parse `{field}` as a number",
                            columns[j]
                        ))
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(row);
        }
        Self::from_rows(columns, &rows).map_err(|e| match e {
            FeatureError::Shape(m) | FeatureError::NonFinite(m) => {
                FeatureError::Csv(format!("{ctx}: {m}"))
            }
            other => other,
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let path = path.as_ref();
        let ctx = path.display().to_string();
        let mut w = csv::Writer::from_path(path).map_err(|e| FeatureError::Csv(format!("{ctx}: {e}")))?;
        w.write_record(&self.columns)
            .map_err(|e| FeatureError::Csv(format!("{ctx}: {e}")))?;
        for i in 0..self.nrows() {
            let rec: Vec<String> = self.values.row(i).iter().map(|v| v.to_string()).collect();
            w.write_record(&rec)
                .map_err(|e| FeatureError::Csv(format!("{ctx}: {e}")))?;
        }
        w.flush().map_err(|e| FeatureError::Csv(format!("{ctx}: {e}")))?;
        Ok(())
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Reorders/subsets columns to `names`; a missing name is an error naming it.
    pub fn select(&self, names: &[String]) -> Result<Self, FeatureError> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| FeatureError::MissingColumn(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let values = self.values.select_columns(idx.iter());
        Ok(Self {
            columns: names.to_vec(),
            values,
        })
    }

    /// Rows `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self, FeatureError> {
        let end = start.checked_add(len).filter(|&e| e <= self.nrows());
        match end {
            Some(_) if len > 0 => Ok(Self {
                columns: self.columns.clone(),
                values: self.values.rows(start, len).into_owned(),
            }),
            _ => Err(FeatureError::Window {
                start,
                len,
                rows: self.nrows(),
            }),
        }
    }
}
