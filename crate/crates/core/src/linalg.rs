use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{NpgaError, Result};

/// Cholesky factorisation with a single jitter retry.
///
/// On failure the factorisation is retried once with `1e-8 · mean(diag)`
/// added to the diagonal; if that fails too the error carries the jitter.
/// Returns the factor and the jitter actually applied (0 when none).
pub fn cholesky_with_jitter(matrix: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = matrix.nrows();
    let mean_diag = if n == 0 {
        0.0
    } else {
        matrix.diagonal().sum() / n as f64
    };
    match Cholesky::new(matrix.clone()) {
        Some(chol) if chol_is_finite(&chol) => Ok((chol, 0.0)),
        _ => {
            let jitter = 1e-8 * mean_diag.abs().max(f64::MIN_POSITIVE);
            let mut bumped = matrix;
            for i in 0..n {
                bumped[(i, i)] += jitter;
            }
            match Cholesky::new(bumped) {
                Some(chol) if chol_is_finite(&chol) => Ok((chol, jitter)),
                _ => Err(NpgaError::NumericalConditioning { jitter }),
            }
        }
    }
}

fn chol_is_finite(chol: &Cholesky<f64, Dyn>) -> bool {
    chol.l_dirty().diagonal().iter().all(|v| v.is_finite() && *v > 0.0)
}

/// log|A| from a Cholesky factor of A.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}
