//! Symmetric matrices: vectorization, matrix log/exp and eigenvalue repair.
//!
//! Vectorization walks the upper triangle row by row and scales off-diagonal
//! entries by `sqrt(2)`, which makes it an isometry from the Frobenius norm
//! to the Euclidean norm. An `n x n` matrix becomes a vector of length
//! `n (n + 1) / 2`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue floor used when repairing near-singular or indefinite input.
pub const EPS_SPD: f64 = 1e-6;
/// Largest tolerated asymmetry `|a_ij - a_ji|` in vectorization.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Side length `n` such that `n (n + 1) / 2 == len`.
pub fn side_from_vec_len(len: usize) -> Option<usize> {
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (n * (n + 1) / 2 == len).then_some(n)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub fn vectorize(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !is_symmetric(m, SYMMETRY_TOL) {
        return Err(Error::Validation("matrix is not symmetric".into()));
    }
    Ok(vectorize_unchecked(m))
}

pub fn vectorize_unchecked(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        out.push(m[(i, i)]);
        for j in i + 1..n {
            out.push(std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    out
}

pub fn devectorize(v: &[f64], n: usize) -> Result<DMatrix<f64>> {
    crate::error::check_len("vectorized symmetric matrix", n * (n + 1) / 2, v.len())?;
    Ok(devectorize_unchecked(v, n))
}

pub fn devectorize_unchecked(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        m[(i, i)] = v[k];
        k += 1;
        for j in i + 1..n {
            let x = v[k] / std::f64::consts::SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

fn apply_spectral(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let fl = f(*lambda);
        scaled.column_mut(j).iter_mut().for_each(|x| *x *= fl);
    }
    let out = scaled * q.transpose();
    (&out + out.transpose()) * 0.5
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Matrix logarithm of an SPD matrix. Eigenvalues are floored at `EPS_SPD`.
pub fn logm(m: &DMatrix<f64>) -> DMatrix<f64> {
    apply_spectral(m, |l| l.max(EPS_SPD).ln())
}

/// Matrix exponential of a symmetric matrix.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    apply_spectral(m, f64::exp)
}

pub fn clamp_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    apply_spectral(m, |l| l.max(floor))
}

/// SPD point (log coordinates) from a matrix; rejects asymmetric or
/// non-positive-definite input.
pub fn point_from_matrix(m: &DMatrix<f64>) -> Result<super::ManifoldPoint> {
    if !is_symmetric(m, SYMMETRY_TOL) {
        return Err(Error::Validation("matrix is not symmetric".into()));
    }
    let min = eigenvalues(m).first().copied().unwrap_or(0.0);
    if !(min > 0.0) {
        return Err(Error::Validation(format!(
            "matrix is not positive definite (min eigenvalue {min:e})"
        )));
    }
    Ok(super::ManifoldPoint::new_unchecked(vectorize_unchecked(&logm(m))))
}

pub fn matrix_from_point(p: &super::ManifoldPoint, n: usize) -> DMatrix<f64> {
    expm(&devectorize_unchecked(&p.coords, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_vectorizes_to_upper_triangle() {
        let v = vectorize(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn off_diagonal_is_scaled() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let v = vectorize(&m).unwrap();
        assert!((v[1] - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        let norm_v: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm_v - m.norm()).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.1, 3.0]);
        assert!(matches!(vectorize(&m), Err(Error::Validation(_))));
    }

    #[test]
    fn side_length_inversion() {
        assert_eq!(side_from_vec_len(120), Some(15));
        assert_eq!(side_from_vec_len(3), Some(2));
        assert_eq!(side_from_vec_len(4), None);
    }

    #[test]
    fn log_exp_roundtrip_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, std::f64::consts::E]));
        let l = logm(&m);
        assert!((l[(1, 1)] - 1.0).abs() < 1e-14);
        assert!((expm(&l) - m).norm() < 1e-13);
    }

    #[test]
    fn eigenvalue_clamp_matches_decomposition() {
        // Q diag(1, -0.5) Q^T for a rotation Q.
        let (c, s) = (0.6f64, 0.8f64);
        let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -0.5]));
        let m = &q * d * q.transpose();
        let ev = eigenvalues(&clamp_eigenvalues(&m, 1e-6));
        assert!((ev[0] - 1e-6).abs() < 1e-12);
        assert!((ev[1] - 1.0).abs() < 1e-12);
    }
}
