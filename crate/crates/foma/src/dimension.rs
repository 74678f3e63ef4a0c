//! Rank selection: TwoNN intrinsic-dimension estimation and
//! explained-variance counting.
//!
//! Both routines answer the same question — how many singular values of a
//! data matrix carry signal — by different means. TwoNN estimates the
//! intrinsic dimension of the point cloud from nearest-neighbor distance
//! ratios; `explained_variance_k` counts how many leading singular values are
//! needed to cover a fraction `rho` of the total singular-value mass.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Rows closer than this (Euclidean) are collapsed before TwoNN estimation;
/// the distance ratio `mu = r2 / r1` is undefined at `r1 = 0`.
pub const DUPLICATE_EPS: f64 = 1e-12;

/// Result of a TwoNN intrinsic-dimension estimate.
#[derive(Debug, Clone)]
pub struct IdEstimate {
    /// Estimated intrinsic dimension (slope of the Pareto fit), `> 0`.
    pub d_hat: f64,
    /// Points actually used by the fit, after duplicate collapse and tail
    /// discard.
    pub n_used: usize,
    /// `d_hat` rounded and clamped to `[1, p]` where `p = min(rows, cols)`
    /// of the input — the valid range for an index into the singular values
    /// of that matrix.
    pub k: usize,
    /// How many duplicate rows were collapsed.
    pub n_duplicates: usize,
}

/// TwoNN intrinsic-dimension estimator.
///
/// For each point, let `r1 <= r2` be the Euclidean distances to its two
/// nearest distinct neighbors and `mu = r2 / r1`. Under a locally uniform
/// density on a `d`-dimensional manifold, `mu` follows a Pareto distribution
/// with shape `d + 1`, so `-log(1 - F(mu)) = d * log(mu)`. The estimator
/// sorts the observed `mu` ascending, pairs them with empirical CDF positions
/// `F_i = i / (N + 1)` (the `N + 1` denominator avoids the `-log 0`
/// singularity the naive `i / N` choice hits at the last point), and returns
/// the slope of the unweighted least-squares line through the origin on
/// `(log mu_i, -log(1 - F_i))`.
///
/// `discard_fraction` in `[0, 0.5)` drops that fraction of the largest `mu`
/// values from the fit (CDF positions keep the full-sample `N`); the TwoNN
/// reference recommends trimming large-`mu` outliers. The default used
/// throughout this crate is 0.
pub fn twonn_id(points: &DMatrix<f64>, discard_fraction: f64) -> Result<IdEstimate> {
    if !(0.0..0.5).contains(&discard_fraction) {
        return Err(Error::Config(format!(
            "twonn_id: discard_fraction = {discard_fraction} must lie in [0, 0.5)"
        )));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("twonn_id: non-finite entries".into()));
    }

    // Collapse near-duplicate rows (keep the first representative).
    let n_total = points.nrows();
    let mut keep: Vec<usize> = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let dup = keep
            .iter()
            .any(|&j| row_dist2(points, i, j) < DUPLICATE_EPS * DUPLICATE_EPS);
        if !dup {
            keep.push(i);
        }
    }
    let n = keep.len();
    let n_duplicates = n_total - n;
    if n < 3 {
        return Err(Error::Input(format!(
            "twonn_id: need at least 3 distinct points, have {n}"
        )));
    }

    // Brute-force two nearest neighbors; n <= ~1e4 in every use here.
    let mut mus = Vec::with_capacity(n);
    for (a, &i) in keep.iter().enumerate() {
        let mut best1 = f64::INFINITY;
        let mut best2 = f64::INFINITY;
        for (b, &j) in keep.iter().enumerate() {
            if a == b {
                continue;
            }
            let d2 = row_dist2(points, i, j);
            if d2 < best1 {
                best2 = best1;
                best1 = d2;
            } else if d2 < best2 {
                best2 = d2;
            }
        }
        let r1 = best1.sqrt();
        let r2 = best2.sqrt();
        if r1 == 0.0 {
            return Err(Error::Numeric(
                "twonn_id: zero first-neighbor distance after duplicate collapse".into(),
            ));
        }
        mus.push(r2 / r1);
    }
    mus.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let n_fit = n - (n as f64 * discard_fraction).floor() as usize;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (idx, &mu) in mus.iter().take(n_fit).enumerate() {
        let f = (idx + 1) as f64 / (n as f64 + 1.0);
        let x = mu.ln();
        let y = -(1.0 - f).ln();
        sxx += x * x;
        sxy += x * y;
    }
    if sxx <= 0.0 {
        return Err(Error::Numeric(
            "twonn_id: degenerate distance ratios (all mu = 1)".into(),
        ));
    }
    let d_hat = sxy / sxx;
    if !(d_hat.is_finite() && d_hat > 0.0) {
        return Err(Error::Numeric(format!(
            "twonn_id: fit produced invalid dimension {d_hat}"
        )));
    }

    let p = points.nrows().min(points.ncols());
    let k = (d_hat.round() as i64).clamp(1, p as i64) as usize;
    Ok(IdEstimate {
        d_hat,
        n_used: n_fit,
        k,
        n_duplicates,
    })
}

fn row_dist2(m: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..m.ncols() {
        let d = m[(i, c)] - m[(j, c)];
        acc += d * d;
    }
    acc
}

/// Largest `k` whose cumulative singular-value fraction stays within `rho`.
///
/// Returns the largest `k` with `(s_1 + .. + s_k) / (s_1 + .. + s_p) <= rho`;
/// if even `k = 1` exceeds `rho`, returns 1 (there must always be at least
/// one unscaled direction). `s` must be non-increasing, non-negative, and not
/// all zero; `rho` must lie in `(0, 1]`.
pub fn explained_variance_k(s: &[f64], rho: f64) -> Result<usize> {
    if !(0.0 < rho && rho <= 1.0) {
        return Err(Error::Config(format!(
            "explained_variance_k: rho = {rho} must lie in (0, 1]"
        )));
    }
    if s.is_empty() {
        return Err(Error::Input("explained_variance_k: empty spectrum".into()));
    }
    if s.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::Input(
            "explained_variance_k: singular values must be finite and non-negative".into(),
        ));
    }
    if s.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Input(
            "explained_variance_k: singular values must be non-increasing".into(),
        ));
    }
    let total: f64 = s.iter().sum();
    if total <= 0.0 {
        return Err(Error::Input(
            "explained_variance_k: all-zero singular values".into(),
        ));
    }

    let mut cum = 0.0;
    let mut k = 0usize;
    for (j, &sj) in s.iter().enumerate() {
        cum += sj;
        if cum / total <= rho {
            k = j + 1;
        } else {
            break;
        }
    }
    Ok(k.max(1))
}
