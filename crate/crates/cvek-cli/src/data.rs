//! CSV ingestion and column selection.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::CliError;

/// A parsed numeric table with named columns.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    /// Row-major data, one inner vector per data row.
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Extracts the selected columns as an `n × k` matrix.
    pub fn matrix(&self, columns: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_rows(), columns.len(), |i, j| {
            self.rows[i][columns[j]]
        })
    }

    /// Extracts one column as a vector.
    pub fn vector(&self, column: usize) -> DVector<f64> {
        DVector::from_iterator(self.n_rows(), self.rows.iter().map(|r| r[column]))
    }
}

/// Loads a CSV file with a header row; every cell must parse as a finite
/// number. Errors name the data row (1-based, excluding the header) and the
/// column.
pub fn load_table(path: &Path) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot open data file {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: cannot read header: {e}", path.display())))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty() {
        return Err(CliError::Input(format!(
            "{}: empty header row",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row_no = idx + 1;
        let record = record.map_err(|e| {
            CliError::Input(format!("{}: data row {row_no}: {e}", path.display()))
        })?;
        if record.len() != headers.len() {
            return Err(CliError::Input(format!(
                "{}: data row {row_no} has {} cells, expected {}",
                path.display(),
                record.len(),
                headers.len()
            )));
        }
        let mut row = Vec::with_capacity(headers.len());
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| {
                CliError::Input(format!(
                    "{}: data row {row_no}, column `{}`: cannot parse `{cell}` as a number",
                    path.display(),
                    headers[col]
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::Input(format!(
                    "{}: data row {row_no}, column `{}`: non-finite value `{cell}`",
                    path.display(),
                    headers[col]
                )));
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(Table { headers, rows })
}

/// Resolves selector tokens to column indices. A token is an exact header
/// name, a 0-based column index, or a `prefix*` pattern matching every header
/// that starts with the prefix. The result is sorted by column position and
/// deduplicated.
pub fn resolve_selectors(headers: &[String], tokens: &[String]) -> Result<Vec<usize>, CliError> {
    let mut indices = Vec::new();
    for token in tokens {
        if let Some(prefix) = token.strip_suffix('*') {
            let matched: Vec<usize> = headers
                .iter()
                .enumerate()
                .filter(|(_, h)| h.starts_with(prefix))
                .map(|(i, _)| i)
                .collect();
            if matched.is_empty() {
                return Err(CliError::Input(format!(
                    "selector `{token}` matches no columns"
                )));
            }
            indices.extend(matched);
        } else if let Some(pos) = headers.iter().position(|h| h == token) {
            indices.push(pos);
        } else if let Ok(idx) = token.parse::<usize>() {
            if idx >= headers.len() {
                return Err(CliError::Input(format!(
                    "column index {idx} out of range (table has {} columns)",
                    headers.len()
                )));
            }
            indices.push(idx);
        } else {
            return Err(CliError::Input(format!(
                "selector `{token}` matches no column (not a header name, index, or `prefix*`)"
            )));
        }
    }
    indices.sort_unstable();
    indices.dedup();
    if indices.is_empty() {
        return Err(CliError::Input("empty column selection".into()));
    }
    Ok(indices)
}

/// Resolves a single-column selector (the response).
pub fn resolve_single(headers: &[String], token: &str) -> Result<usize, CliError> {
    let indices = resolve_selectors(headers, &[token.to_string()])?;
    if indices.len() != 1 {
        return Err(CliError::Input(format!(
            "selector `{token}` must match exactly one column, matched {}",
            indices.len()
        )));
    }
    Ok(indices[0])
}

/// Ensures the response column and the two groups are pairwise disjoint.
pub fn check_disjoint(
    headers: &[String],
    response: usize,
    group1: &[usize],
    group2: &[usize],
) -> Result<(), CliError> {
    for &g in group1.iter().chain(group2) {
        if g == response {
            return Err(CliError::Input(format!(
                "response column `{}` also appears in a feature group",
                headers[response]
            )));
        }
    }
    if let Some(&shared) = group1.iter().find(|i| group2.contains(i)) {
        return Err(CliError::Input(format!(
            "column `{}` appears in both feature groups",
            headers[shared]
        )));
    }
    Ok(())
}
