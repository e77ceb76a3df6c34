//! Dense symmetric-matrix helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Returns `(m + mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Maximum absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev = symmetrize(m).symmetric_eigenvalues();
    ev.as_mut_slice().sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    ev[ev.len() - 1]
}

/// Projects a symmetric matrix onto the PSD cone by clipping negative
/// eigenvalues at `floor` (usually 0).
pub fn clip_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let recon = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&recon)
}

/// Symmetric PSD square root. Negative eigenvalues (round-off) are clipped
/// at zero first.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let recon = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    symmetrize(&recon)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
/// Returns `None` when the factorization fails.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    symmetrize(m).cholesky().map(|c| symmetrize(&c.inverse()))
}

/// log det of a symmetric positive-definite matrix. `None` if not PD.
pub fn spd_log_det(m: &DMatrix<f64>) -> Option<f64> {
    symmetrize(m).cholesky().map(|c| {
        2.0 * c
            .l()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>()
    })
}

/// `vᵀ m v` for symmetric `m`.
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}
