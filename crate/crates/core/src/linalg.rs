//! Dense symmetric positive-definite helpers.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Diagonal jitter tried in order until the factorisation succeeds.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Cholesky factor of `m + jitter * I` for the first jitter on the ladder
/// that yields a positive-definite matrix.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    for &jitter in &JITTER_LADDER {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(c) = a.cholesky() {
            if c.l().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok((c, jitter));
            }
        }
    }
    Err(Error::NotPositiveDefinite {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_singular_psd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (c, jitter) = cholesky_with_jitter(&m).unwrap();
        assert!(jitter > 0.0);
        assert!(c.l().diagonal().iter().all(|d| *d > 0.0));
    }

    #[test]
    fn indefinite_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_with_jitter(&m).is_err());
    }
}
