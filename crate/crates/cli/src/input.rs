//! Reading JSON inputs and the `--norm` flag.

use std::path::Path;

use contraction_core::serde_rows::matrix_from_rows;
use contraction_core::{Matrix, NormSpec, Vector};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Parses JSON, reporting the failing field path and the line and column.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path.is_empty() || path == "." {
            CliError::Parse(format!("{origin}: {inner}"))
        } else {
            CliError::Parse(format!("{origin}: field `{path}`: {inner}"))
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text, &path.display().to_string())
}

/// A matrix file: either a bare array of rows or `{"matrix": rows}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum MatrixFile {
    Rows(Vec<Vec<f64>>),
    Wrapped { matrix: Vec<Vec<f64>> },
}

/// A vector file: either a bare array or `{"eta": [...]}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum VectorFile {
    Values(Vec<f64>),
    Wrapped { eta: Vec<f64> },
}

pub fn rows_to_matrix(rows: &[Vec<f64>], field: &str) -> CliResult<Matrix> {
    if rows.is_empty() {
        return Err(CliError::Invalid(format!("{field}: matrix has no rows")));
    }
    let m = matrix_from_rows(rows).map_err(|e| CliError::Invalid(format!("{field}: {e}")))?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Invalid(format!("{field}: entries must be finite")));
    }
    Ok(m)
}

pub fn read_matrix(path: &Path) -> CliResult<Matrix> {
    let rows = match read_json::<MatrixFile>(path)? {
        MatrixFile::Rows(r) | MatrixFile::Wrapped { matrix: r } => r,
    };
    rows_to_matrix(&rows, &path.display().to_string())
}

fn read_vector(path: &Path) -> CliResult<Vector> {
    let v = match read_json::<VectorFile>(path)? {
        VectorFile::Values(v) | VectorFile::Wrapped { eta: v } => v,
    };
    Ok(Vector::from_vec(v))
}

/// `l1`, `l2`, `linf`, `wl2:<file>` (weight matrix P) or `winf:<file>`
/// (weight vector η).
pub fn parse_norm_flag(flag: &str) -> CliResult<NormSpec> {
    let bad = || CliError::Parse(format!("unknown norm `{flag}`; expected l1, l2, linf, wl2:<file> or winf:<file>"));
    match flag {
        "l1" => Ok(NormSpec::L1),
        "l2" => Ok(NormSpec::L2),
        "linf" => Ok(NormSpec::Linf),
        _ => {
            let (kind, file) = flag.split_once(':').ok_or_else(bad)?;
            match kind {
                "wl2" => NormSpec::weighted_l2(read_matrix(Path::new(file))?).map_err(|e| CliError::core(file, e)),
                "winf" => NormSpec::weighted_linf(read_vector(Path::new(file))?).map_err(|e| CliError::core(file, e)),
                _ => Err(bad()),
            }
        }
    }
}

/// `a,b` for `--tspan`.
pub fn parse_tspan(s: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let parse = |p: &str| p.parse::<f64>().map_err(|_| CliError::Parse(format!("--tspan: `{p}` is not a number")));
    match parts.as_slice() {
        [a, b] => Ok((parse(a)?, parse(b)?)),
        _ => Err(CliError::Parse(format!("--tspan expects `t0,t1`, got `{s}`"))),
    }
}
