//! Trial CSV parsing and writing.
//!
//! Layout: header row with columns `x1..xp`, `treatment` (−1 or 1), `outcome`,
//! and an optional `propensity` in (0, 1). A missing propensity column means a
//! 1:1 randomized design and defaults to 0.5 (logged to stderr). Missing cells
//! are hard errors.

use nalgebra::DMatrix;
use std::path::Path;

use itr::TrialDataset;

use crate::config::{CliError, CliResult};

pub struct TrialCsv {
    pub dataset: TrialDataset,
}

fn parse_cell(raw: &str, path: &Path, row: usize, col: &str) -> CliResult<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(CliError::data(format!(
            "{}: missing value in column {col}, data row {row}",
            path.display()
        )));
    }
    trimmed.parse::<f64>().map_err(|_| {
        CliError::data(format!(
            "{}: cannot parse \"{trimmed}\" in column {col}, data row {row}",
            path.display()
        ))
    })
}

/// Read a full trial CSV into a dataset.
pub fn read_trial_csv(path: &Path) -> CliResult<TrialCsv> {
    let (x, headers, records) = read_covariates_and_records(path)?;
    let t_col = headers
        .iter()
        .position(|h| h == "treatment")
        .ok_or_else(|| CliError::data(format!("{}: no treatment column", path.display())))?;
    let r_col = headers
        .iter()
        .position(|h| h == "outcome")
        .ok_or_else(|| CliError::data(format!("{}: no outcome column", path.display())))?;
    let pi_col = headers.iter().position(|h| h == "propensity");
    if pi_col.is_none() {
        eprintln!(
            "note: {} has no propensity column; assuming 1:1 randomization (0.5)",
            path.display()
        );
    }
    let n = records.len();
    let mut treatments = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    let mut propensities = Vec::with_capacity(n);
    for (i, rec) in records.iter().enumerate() {
        let t = parse_cell(&rec[t_col], path, i + 1, "treatment")?;
        if t != 1.0 && t != -1.0 {
            return Err(CliError::data(format!(
                "{}: treatment must be -1 or 1, got {t} in data row {}",
                path.display(),
                i + 1
            )));
        }
        treatments.push(t as i8);
        outcomes.push(parse_cell(&rec[r_col], path, i + 1, "outcome")?);
        propensities.push(match pi_col {
            Some(c) => parse_cell(&rec[c], path, i + 1, "propensity")?,
            None => 0.5,
        });
    }
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dataset = TrialDataset::new(x, treatments, outcomes, propensities, label)?;
    Ok(TrialCsv { dataset })
}

/// Read just the covariate block (`x1..xp`), accepting files with or without
/// the treatment/outcome columns.
pub fn read_covariates(path: &Path) -> CliResult<DMatrix<f64>> {
    Ok(read_covariates_and_records(path)?.0)
}

#[allow(clippy::type_complexity)]
fn read_covariates_and_records(
    path: &Path,
) -> CliResult<(DMatrix<f64>, Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| CliError::data(e.to_string()))?.iter().map(String::from).collect();
    // covariate columns must be x1..xp, contiguous from 1
    let mut x_cols = Vec::new();
    for p in 1.. {
        match headers.iter().position(|h| h == &format!("x{p}")) {
            Some(c) => x_cols.push(c),
            None => break,
        }
    }
    if x_cols.is_empty() {
        return Err(CliError::data(format!("{}: no covariate columns x1..xp", path.display())));
    }
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if rec.len() != headers.len() {
            return Err(CliError::data(format!(
                "{}: ragged row with {} fields, expected {}",
                path.display(),
                rec.len(),
                headers.len()
            )));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(CliError::data(format!("{}: no data rows", path.display())));
    }
    let n = records.len();
    let p = x_cols.len();
    let mut x = DMatrix::zeros(n, p);
    for (i, rec) in records.iter().enumerate() {
        for (j, &c) in x_cols.iter().enumerate() {
            x[(i, j)] = parse_cell(&rec[c], path, i + 1, &format!("x{}", j + 1))?;
        }
    }
    Ok((x, headers, records))
}
