//! Quantized tensor trains.
//!
//! A [`QttVector`] stores a vector of length `n_1 * ... * n_N` as a chain of
//! order-3 cores of shape `(r_{k-1}, n_k, r_k)` with `r_0 = r_N = 1`. A
//! [`QttOperator`] stores a matrix as a chain of order-4 cores of shape
//! `(R_{k-1}, n_k, m_k, R_k)` (row mode, then column mode).
//!
//! Dense flattening is row-major with core 1 as the most significant digit,
//! so `x[i_1 ... i_N] = G_1[i_1] G_2[i_2] ... G_N[i_N]` and the flat index is
//! `((i_1 n_2 + i_2) n_3 + ...)`. Multi-dimensional grids concatenate the
//! cores of each dimension in order, so the first dimension is the slowest.

pub mod io;
pub mod linalg;
pub(crate) mod operator;
pub(crate) mod vector;

pub use operator::QttOperator;
pub use vector::QttVector;

use serde::{Deserialize, Serialize};

use crate::error::{QttError, Result};

/// Hard limit on dense materialization.
pub const DENSE_LIMIT: usize = 1 << 24;

/// Truncation rule for SVD-based compression.
///
/// Each of the `N - 1` bond truncations discards singular values with tail
/// norm at most `rel_tol * ||x|| / sqrt(N - 1)`, so the total relative error
/// is bounded by `rel_tol`. `max_rank` additionally caps every bond.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub rel_tol: f64,
    pub max_rank: Option<usize>,
}

impl TruncationPolicy {
    pub fn new(rel_tol: f64, max_rank: Option<usize>) -> Result<Self> {
        let p = TruncationPolicy { rel_tol, max_rank };
        p.validate()?;
        Ok(p)
    }

    pub fn relative(rel_tol: f64) -> Self {
        TruncationPolicy {
            rel_tol,
            max_rank: None,
        }
    }

    pub fn exact() -> Self {
        Self::relative(1e-14)
    }

    pub fn with_cap(self, cap: usize) -> Self {
        TruncationPolicy {
            max_rank: Some(cap),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol >= 0.0) || !self.rel_tol.is_finite() {
            return Err(QttError::Invalid(format!(
                "truncation tolerance must be finite and >= 0, got {}",
                self.rel_tol
            )));
        }
        if self.max_rank == Some(0) {
            return Err(QttError::Invalid("rank cap must be >= 1".into()));
        }
        Ok(())
    }

    pub(crate) fn per_bond_delta(&self, norm: f64, cores: usize) -> f64 {
        if cores <= 1 {
            return self.rel_tol * norm;
        }
        self.rel_tol * norm / ((cores - 1) as f64).sqrt()
    }
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self::relative(1e-10)
    }
}

/// Decompose a flat index into per-core digits (core 1 most significant).
pub fn flat_to_digits(mut k: usize, modes: &[usize]) -> Vec<usize> {
    let mut digits = vec![0; modes.len()];
    for (d, &n) in digits.iter_mut().zip(modes.iter()).rev() {
        *d = k % n;
        k /= n;
    }
    digits
}

pub fn digits_to_flat(digits: &[usize], modes: &[usize]) -> usize {
    digits.iter().zip(modes).fold(0, |acc, (&d, &n)| acc * n + d)
}

/// Binary digits of `j` over `c` cores, most significant first.
pub fn bits_msb(j: usize, c: usize) -> Vec<usize> {
    (0..c).map(|i| (j >> (c - 1 - i)) & 1).collect()
}

pub(crate) fn checked_product(modes: &[usize]) -> Option<usize> {
    modes.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digit_roundtrip() {
        let modes = [2, 3, 2, 2];
        for k in 0..24 {
            assert_eq!(digits_to_flat(&flat_to_digits(k, &modes), &modes), k);
        }
        assert_eq!(bits_msb(6, 4), vec![0, 1, 1, 0]);
    }

    #[test]
    fn policy_validation() {
        assert!(TruncationPolicy::new(-1.0, None).is_err());
        assert!(TruncationPolicy::new(f64::NAN, None).is_err());
        assert!(TruncationPolicy::new(1e-3, Some(0)).is_err());
        assert!(TruncationPolicy::new(0.0, Some(4)).is_ok());
    }
}
