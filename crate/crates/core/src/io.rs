//! Matrix/vector file formats shared with the CLI: CSV (one row per line,
//! comma-separated decimals) and JSON nested arrays. Values are written with
//! 17 significant digits so both formats round-trip at full double
//! precision.

use nalgebra::{DMatrix, DVector};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: field {field}: {detail}")]
    Parse {
        path: String,
        line: usize,
        field: usize,
        detail: String,
    },
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },
}

/// 17 significant digits: enough to reproduce any f64 exactly on parse.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_matrix_csv(text: &str, path: &str) -> Result<DMatrix<f64>, IoError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (fieldno, field) in trimmed.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|e| IoError::Parse {
                path: path.to_string(),
                line: lineno + 1,
                field: fieldno + 1,
                detail: format!("{e}: {field:?}"),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(IoError::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    field: row.len(),
                    detail: format!(
                        "row has {} fields, previous rows have {}",
                        row.len(),
                        first.len()
                    ),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::Format {
            path: path.to_string(),
            detail: "no data rows".into(),
        });
    }
    let (r, c) = (rows.len(), rows[0].len());
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| format_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_matrix_csv(&text, &path.display().to_string())
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<(), IoError> {
    let path = path.as_ref();
    std::fs::write(path, matrix_to_csv(m)).map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_matrix_json(text: &str, path: &str) -> Result<DMatrix<f64>, IoError> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text).map_err(|e| IoError::Format {
        path: path.to_string(),
        detail: e.to_string(),
    })?;
    if rows.is_empty() {
        return Err(IoError::Format {
            path: path.to_string(),
            detail: "no data rows".into(),
        });
    }
    let c = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            return Err(IoError::Format {
                path: path.to_string(),
                detail: format!("row {} has {} entries, row 0 has {c}", i, row.len()),
            });
        }
    }
    let r = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

/// Reads a matrix as JSON when the extension is `.json`, CSV otherwise.
pub fn read_matrix_auto(path: impl AsRef<Path>) -> Result<DMatrix<f64>, IoError> {
    let path = path.as_ref();
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
            path: path.display().to_string(),
            source,
        })?;
        parse_matrix_json(&text, &path.display().to_string())
    } else {
        read_matrix_csv(path)
    }
}

/// Reads a vector: a single-column or single-row matrix in either format.
pub fn read_vector_auto(path: impl AsRef<Path>) -> Result<DVector<f64>, IoError> {
    let path = path.as_ref();
    let m = read_matrix_auto(path)?;
    if m.ncols() == 1 {
        Ok(DVector::from_column_slice(m.as_slice()))
    } else if m.nrows() == 1 {
        Ok(m.row(0).transpose())
    } else {
        Err(IoError::Format {
            path: path.display().to_string(),
            detail: format!("expected a vector, got a {}x{} matrix", m.nrows(), m.ncols()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    #[test]
    fn csv_round_trip_full_precision() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        let m = DMatrix::from_fn(4, 3, |_, _| {
            f64::from_bits(rng.random::<u64>() & 0x7FEF_FFFF_FFFF_FFFF)
        });
        let text = matrix_to_csv(&m);
        let back = parse_matrix_csv(&text, "mem").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn json_round_trip_full_precision() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, -0.1, 1e-300, 2.0f64.sqrt()]);
        let rows: Vec<Vec<f64>> = (0..2).map(|i| m.row(i).iter().copied().collect()).collect();
        let text = serde_json::to_string(&rows).unwrap();
        let back = parse_matrix_json(&text, "mem").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn parse_error_names_line_and_field() {
        let err = parse_matrix_csv("1.0,2.0\n3.0,abc\n", "bad.csv").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.csv:2"), "{msg}");
        assert!(msg.contains("field 2"), "{msg}");

        let err = parse_matrix_csv("1.0,2.0\n3.0\n", "ragged.csv").unwrap_err();
        assert!(err.to_string().contains("ragged.csv:2"));
    }

    #[test]
    fn vector_reading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        std::fs::write(&p, "1.0\n2.0\n3.0\n").unwrap();
        let v = read_vector_auto(&p).unwrap();
        assert_eq!(v, nalgebra::dvector![1.0, 2.0, 3.0]);
        let p = dir.path().join("row.csv");
        std::fs::write(&p, "1.0,2.0\n").unwrap();
        let v = read_vector_auto(&p).unwrap();
        assert_eq!(v.len(), 2);
    }
}
