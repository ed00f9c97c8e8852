//! Singular-value profile of an embedding matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{GateError, Result};

/// Singular values of `z` (N x h), descending, from the eigen-decomposition
/// of Z^T Z. Each value is taken as ||Z v|| for its unit eigenvector `v`
/// rather than the square root of the clamped eigenvalue: same quantity,
/// but small values keep absolute accuracy ~eps * sigma_max instead of
/// ~sqrt(eps) * sigma_max. Always `h` values, including structural zeros
/// when N < h.
pub fn singular_value_profile(z: &Array2<f64>) -> Result<Vec<f64>> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(GateError::Numerical("non-finite embedding".into()));
    }
    let h = z.ncols();
    let gram = z.t().dot(z);
    let m = DMatrix::from_fn(h, h, |i, j| gram[[i, j]]);
    let eig = SymmetricEigen::new(m);
    let zm = DMatrix::from_fn(z.nrows(), h, |i, j| z[[i, j]]);
    let mut sv: Vec<f64> = (0..h).map(|j| (&zm * eig.eigenvectors.column(j)).norm()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Sum of the last `count` values of a descending profile.
pub fn trailing_sum(profile: &[f64], count: usize) -> f64 {
    profile.iter().rev().take(count).sum()
}
