//! Shared helpers and tolerances for the integration tests.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative tolerance for SVD reconstruction / orthogonality / identity
/// checks.
pub const TOL_SVD: f64 = 1e-8;

/// Tolerance for comparisons against an independently computed oracle.
pub const TOL_ORACLE: f64 = 1e-8;

/// Maximum relative error allowed for analytic gradients vs central finite
/// differences.
pub const TOL_GRADCHECK: f64 = 1e-4;

/// Step used by central finite differences.
pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense matrix with i.i.d. Uniform(-1, 1) entries.
pub fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Largest absolute entry of a matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `max |a - b|` relative to `max(1, max |b|)`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let denom = max_abs(b).max(1.0);
    let mut worst = 0.0_f64;
    for (x, y) in a.iter().zip(b.iter()) {
        worst = worst.max((x - y).abs());
    }
    worst / denom
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    foma::thin_svd(m).unwrap().s[0]
}

/// Random matrix of the given shape and rank (product of two Gaussian-ish
/// factors).
pub fn rand_rank_deficient(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    rank: usize,
) -> DMatrix<f64> {
    let left = rand_matrix(rng, rows, rank);
    let right = rand_matrix(rng, rank, cols);
    left * right
}
