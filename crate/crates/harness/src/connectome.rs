//! Connectome CSV ingestion: one subject per row, either the full `N x N`
//! correlation matrix row-major (`N^2` columns) or its upper triangle
//! including the diagonal, row-major (`N(N+1)/2` columns, entries unscaled).
//! A header line is optional.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use rvae::geometry::spd;
use rvae::{ManifoldKind, ManifoldPoint};

use crate::error::{io_err, HarnessError, Result};

pub const SYMMETRY_TOL: f64 = 1e-6;
pub const DIAGONAL_TOL: f64 = 1e-6;
/// Matrices whose smallest eigenvalue lies in `[REPAIR_FLOOR, EPS_SPD)` are
/// repaired by clamping; anything more indefinite is rejected.
pub const REPAIR_FLOOR: f64 = -1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Repair {
    /// 1-based line number in the file.
    pub line: usize,
    pub min_eigenvalue: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectomeDataset {
    pub size: usize,
    /// Accepted matrices, full row-major, after repair.
    pub matrices: Vec<Vec<f64>>,
    pub repairs: Vec<Repair>,
    pub rejections: Vec<Rejection>,
}

impl ConnectomeDataset {
    pub fn manifold(&self) -> ManifoldKind {
        ManifoldKind::SpdLogEuclidean(self.size)
    }

    /// Log-Euclidean coordinates of every accepted matrix.
    pub fn points(&self) -> Result<Vec<ManifoldPoint>> {
        self.matrices
            .iter()
            .map(|m| Ok(spd::point_from_matrix(&DMatrix::from_row_slice(self.size, self.size, m))?))
            .collect()
    }
}

fn side_for(columns: usize, expected: Option<usize>) -> Option<(usize, bool)> {
    let tri = |n: usize| n * (n + 1) / 2;
    if let Some(n) = expected {
        return if columns == n * n {
            Some((n, true))
        } else if columns == tri(n) {
            Some((n, false))
        } else {
            None
        };
    }
    let r = (columns as f64).sqrt().round() as usize;
    if r * r == columns {
        return Some((r, true));
    }
    spd::side_from_vec_len(columns).map(|n| (n, false))
}

/// Parses and validates a connectome file. The matrix size is `expected`
/// when given, otherwise it is inferred from the first numeric row (a
/// perfect-square column count is read as a full matrix). Bad rows are
/// rejected individually and reported; the call only fails when no row
/// survives or the file cannot be read.
pub fn ingest_connectomes(path: &Path, expected: Option<usize>) -> Result<ConnectomeDataset> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    ingest_connectomes_str(&text, expected)
}

pub fn ingest_connectomes_str(text: &str, expected: Option<usize>) -> Result<ConnectomeDataset> {
    let mut size = expected;
    let mut matrices = Vec::new();
    let mut repairs = Vec::new();
    let mut rejections = Vec::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut first = true;
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let is_first = std::mem::replace(&mut first, false);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = match parsed {
            Ok(v) => v,
            Err(_) if is_first => continue,
            Err(_) => {
                rejections.push(Rejection {
                    line,
                    reason: "non-numeric entry".into(),
                });
                continue;
            }
        };
        let reject = |reason: String, rej: &mut Vec<Rejection>| rej.push(Rejection { line, reason });
        if vals.iter().any(|v| !v.is_finite()) {
            reject("non-finite entry".into(), &mut rejections);
            continue;
        }
        let Some((n, full)) = side_for(vals.len(), size) else {
            reject(format!("{} columns match no matrix size", vals.len()), &mut rejections);
            continue;
        };
        size.get_or_insert(n);
        let m = if full {
            DMatrix::from_row_slice(n, n, &vals)
        } else {
            let mut m = DMatrix::zeros(n, n);
            let mut k = 0;
            for i in 0..n {
                for j in i..n {
                    m[(i, j)] = vals[k];
                    m[(j, i)] = vals[k];
                    k += 1;
                }
            }
            m
        };
        let asym = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
            .fold(0.0, f64::max);
        if asym > SYMMETRY_TOL {
            reject(format!("asymmetry {asym:e} exceeds {SYMMETRY_TOL:e}"), &mut rejections);
            continue;
        }
        if let Some(i) = (0..n).find(|&i| (m[(i, i)] - 1.0).abs() > DIAGONAL_TOL) {
            reject(format!("diagonal entry {i} is {} instead of 1", m[(i, i)]), &mut rejections);
            continue;
        }
        let m = (&m + m.transpose()) * 0.5;
        let min_eig = spd::eigenvalues(&m)[0];
        let m = if min_eig < spd::EPS_SPD {
            if min_eig < REPAIR_FLOOR {
                reject(format!("smallest eigenvalue {min_eig:e} is too negative to repair"), &mut rejections);
                continue;
            }
            repairs.push(Repair {
                line,
                min_eigenvalue: min_eig,
            });
            spd::clamp_eigenvalues(&m, spd::EPS_SPD)
        } else {
            m
        };
        matrices.push(m.transpose().as_slice().to_vec());
    }
    let size = size.ok_or_else(|| HarnessError::Input("no numeric rows in connectome file".into()))?;
    if matrices.is_empty() {
        return Err(HarnessError::Input(format!(
            "every row was rejected ({} rejections)",
            rejections.len()
        )));
    }
    Ok(ConnectomeDataset {
        size,
        matrices,
        repairs,
        rejections,
    })
}

/// Writes matrices (full, row-major) as a connectome CSV with a header.
pub fn connectomes_to_csv(size: usize, matrices: &[Vec<f64>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record((0..size * size).map(|k| format!("c{}_{}", k / size, k % size)))?;
    for m in matrices {
        w.write_record(m.iter().map(|v| crate::io::format_float(*v)))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Input(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        m
    }

    #[test]
    fn identity_file_is_valid() {
        let csv = connectomes_to_csv(3, &vec![identity(3); 4]).unwrap();
        let d = ingest_connectomes_str(&csv, None).unwrap();
        assert_eq!(d.size, 3);
        assert_eq!(d.matrices.len(), 4);
        assert!(d.repairs.is_empty() && d.rejections.is_empty());
        let pts = d.points().unwrap();
        assert!(pts[0].coords.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn triangle_format_without_header() {
        let d = ingest_connectomes_str("1,0.5,1\n1,-0.2,1\n", None).unwrap();
        assert_eq!(d.size, 2);
        assert_eq!(d.matrices[1], vec![1.0, -0.2, -0.2, 1.0]);
    }

    #[test]
    fn near_psd_matrix_is_repaired() {
        // Eigenvalues 1 + a and 1 - a with a = 1 + 1e-4.
        let a = 1.0 + 1e-4;
        let text = format!("1,{a},{a},1\n1,0,0,1\n");
        let d = ingest_connectomes_str(&text, None).unwrap();
        assert_eq!(d.matrices.len(), 2);
        assert_eq!(d.repairs.len(), 1);
        assert_eq!(d.repairs[0].line, 1);
        assert!((d.repairs[0].min_eigenvalue + 1e-4).abs() < 1e-10);
        let m = DMatrix::from_row_slice(2, 2, &d.matrices[0]);
        assert!(spd::eigenvalues(&m)[0] >= spd::EPS_SPD * (1.0 - 1e-9));
    }

    #[test]
    fn malformed_rows_are_rejected_individually() {
        let text = "h0,h1,h2,h3\n1,0,0,1\n1,0.3,0.1,1\n1,x,0,1\n1,0,0\n2,0,0,1\n1,nan,nan,1\n1,0.2,0.2,1\n1,3,3,1\n";
        let d = ingest_connectomes_str(text, None).unwrap();
        assert_eq!(d.matrices.len(), 2);
        let lines: Vec<usize> = d.rejections.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![3, 4, 5, 6, 7, 9]);
    }

    #[test]
    fn all_rows_bad_is_an_error() {
        assert!(ingest_connectomes_str("1,2,3\n", Some(4)).is_err());
        assert!(ingest_connectomes_str("", None).is_err());
    }
}
