//! Minimal dense linear algebra for small SPD matrices.
//!
//! The covariance matrices here are at most a few dozen rows, so a plain
//! Cholesky factorization is all that is needed.

use crate::{Error, Result};
use ndarray::Array2;

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix. Fails if a pivot is not strictly positive.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not positive definite (pivot {i} = {sum:e})"
                    )));
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Inverse of an SPD matrix via its Cholesky factor.
pub fn spd_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let l = cholesky(a)?;
    let n = a.nrows();
    // Solve L Lᵀ X = I column by column.
    let mut inv = Array2::<f64>::zeros((n, n));
    for col in 0..n {
        // Forward substitution: L y = e_col
        let mut y = vec![0.0f64; n];
        for i in 0..n {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                sum -= l[[i, k]] * y[k];
            }
            y[i] = sum / l[[i, i]];
        }
        // Back substitution: Lᵀ x = y
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in i + 1..n {
                sum -= l[[k, i]] * inv[[k, col]];
            }
            inv[[i, col]] = sum / l[[i, i]];
        }
    }
    Ok(inv)
}
