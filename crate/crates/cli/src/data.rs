//! Training data ingestion: comma-separated reals, one input per row.

use std::path::Path;

use ntk_core::kernels::TrainingSet;

use crate::{emit, CliError};

/// Training set plus non-fatal observations about it.
pub struct LoadedData {
    pub training: TrainingSet,
    /// One-based line number of each loaded row, for diagnostics.
    pub lines: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Parses a CSV of inputs. Every malformed field is reported with its line
/// number; blank lines are skipped. Repeated rows load fine but attach a
/// distinctness warning, and when beta is zero proportional pairs warn too
/// because the limiting kernels are singular on them.
pub fn load_training_set(
    path: &Path,
    expected_dim: usize,
    beta: f64,
) -> Result<LoadedData, CliError> {
    let text = emit::read_text(path)?;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for piece in trimmed.split(',') {
            let field = piece.trim();
            let value: f64 = field.parse().map_err(|_| {
                CliError::Validation(format!(
                    "{}: line {line_no}: cannot parse {field:?} as a real",
                    path.display()
                ))
            })?;
            row.push(value);
        }
        if row.len() != expected_dim {
            return Err(CliError::Validation(format!(
                "{}: line {line_no}: row has {} entries, the architecture expects {expected_dim}",
                path.display(),
                row.len()
            )));
        }
        rows.push(row);
        lines.push(line_no);
    }
    let training = TrainingSet::new(rows)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;

    let mut warnings = Vec::new();
    let repeated = training.repeated_pairs();
    for &(i, j) in &repeated {
        warnings.push(format!(
            "warning: rows at lines {} and {} are identical; every kernel matrix is \
             singular on that pair",
            lines[i], lines[j]
        ));
    }
    if beta == 0.0 {
        for (i, j) in training.proportional_pairs() {
            if repeated.contains(&(i, j)) {
                continue;
            }
            warnings.push(format!(
                "warning: rows at lines {} and {} are proportional; with beta = 0 the \
                 limiting kernels are singular on that pair",
                lines[i], lines[j]
            ));
        }
    }
    Ok(LoadedData { training, lines, warnings })
}

/// Reads one real per line, used for target vectors and initial outputs.
pub fn load_column(path: &Path, expected_len: usize) -> Result<Vec<f64>, CliError> {
    let text = emit::read_text(path)?;
    let mut values = Vec::new();
    for (index, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: f64 = trimmed.parse().map_err(|_| {
            CliError::Validation(format!(
                "{}: line {}: cannot parse {trimmed:?} as a real",
                path.display(),
                index + 1
            ))
        })?;
        values.push(value);
    }
    if values.len() != expected_len {
        return Err(CliError::Validation(format!(
            "{}: expected {expected_len} values, found {}",
            path.display(),
            values.len()
        )));
    }
    Ok(values)
}
