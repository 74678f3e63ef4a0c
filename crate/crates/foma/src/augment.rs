//! Batch augmentation: the FOMA transform and the baselines it is compared
//! against (mixup, additive Gaussian noise).
//!
//! All transforms map a [`Batch`] to a new batch of the same shape. They are
//! pure given an explicit RNG handle, so distinct batches can be augmented
//! concurrently with independent RNG streams.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Distribution;

use crate::dimension::{explained_variance_k, twonn_id, IdEstimate};
use crate::error::{Error, Result};
use crate::linalg::{reconstruct_scaled, thin_svd, SvMode};

/// A paired feature matrix `x` (b x n) and label matrix `y` (b x m) with row
/// correspondence.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl Batch {
    /// Build a batch, validating row correspondence and finiteness.
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Input(format!(
                "batch: x has {} rows but y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Input("batch: empty".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("batch: non-finite entries".into()));
        }
        Ok(Batch { x, y })
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    /// Column-concatenated `[x | y]`, the matrix FOMA decomposes.
    pub fn concat(&self) -> DMatrix<f64> {
        let (b, n, m) = (self.x.nrows(), self.x.ncols(), self.y.ncols());
        let mut a = DMatrix::zeros(b, n + m);
        a.view_mut((0, 0), (b, n)).copy_from(&self.x);
        a.view_mut((0, n), (b, m)).copy_from(&self.y);
        a
    }

    /// Split a `b x (n + m)` matrix back into feature and label blocks.
    pub fn split(a: &DMatrix<f64>, n: usize, m: usize) -> Batch {
        debug_assert_eq!(a.ncols(), n + m);
        Batch {
            x: a.columns(0, n).into_owned(),
            y: a.columns(n, m).into_owned(),
        }
    }
}

/// Augmentation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// No augmentation (empirical risk minimization).
    Erm,
    /// FOMA with `k` from intrinsic dimension.
    Foma,
    /// FOMA with `k` from the explained-variance threshold `rho`.
    FomaRho,
    /// Convex combinations of sample pairs.
    Mixup,
    /// Additive Gaussian noise on features and labels.
    Noise,
}

/// How the rank `k` is chosen for each batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KStrategy {
    /// TwoNN on the whole training set, estimated once and cached.
    IdDataset,
    /// TwoNN on the rows of the current batch.
    IdBatch,
    /// Explained-variance counting on the current batch's spectrum.
    Rho,
}

/// Where the FOMA transform is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplySite {
    Input,
    Latent,
    Both,
}

/// Optional multiplicative scaling of the training loss by a function of the
/// drawn `lambda` (an ablation axis; the default is no scaling).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuProfile {
    One,
    Lambda,
    LambdaSq,
}

impl MuProfile {
    pub fn mu(&self, lambda: f64) -> f64 {
        match self {
            MuProfile::One => 1.0,
            MuProfile::Lambda => lambda,
            MuProfile::LambdaSq => lambda * lambda,
        }
    }
}

/// Distribution the per-batch `lambda` is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaDist {
    /// `lambda ~ Beta(alpha, alpha)`, support `[0, 1]` — scales down.
    Beta,
    /// `lambda ~ Uniform(1, alpha)` with `alpha > 1` — scales up, which adds
    /// noise (the perturbation-bound construction).
    UniformAboveOne,
}

/// Full specification of one augmentation method and its hyper-parameters.
///
/// Only the fields relevant to `method` are consulted; the rest are ignored.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AugmentPolicy {
    pub method: Method,
    /// Beta shape (or upper bound for `uniform_above_one`).
    pub alpha: f64,
    /// Explained-variance threshold, used by the `rho` k-strategy.
    pub rho: f64,
    pub k_strategy: KStrategy,
    pub sv_mode: SvMode,
    pub apply_site: ApplySite,
    pub mu_profile: MuProfile,
    /// Per-coordinate Gaussian scale for the noise baseline.
    pub noise_sigma: f64,
    pub lambda_dist: LambdaDist,
    /// Hidden-layer index (1-based) after whose activation the latent
    /// transform is applied.
    pub latent_layer: usize,
    /// Treat augmented latent activations as constants (no gradient through
    /// the transform) — an ablation switch.
    pub detached_latent: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            method: Method::Erm,
            alpha: 1.0,
            rho: 0.95,
            k_strategy: KStrategy::Rho,
            sv_mode: SvMode::Small,
            apply_site: ApplySite::Input,
            mu_profile: MuProfile::One,
            noise_sigma: 0.0,
            lambda_dist: LambdaDist::Beta,
            latent_layer: 2,
            detached_latent: false,
        }
    }
}

impl AugmentPolicy {
    /// Validate every field that `method` makes relevant.
    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::Erm => {}
            Method::Foma | Method::FomaRho | Method::Mixup => {
                if !(self.alpha.is_finite() && self.alpha > 0.0) {
                    return Err(Error::Config(format!(
                        "policy: alpha = {} must be positive and finite",
                        self.alpha
                    )));
                }
                if self.lambda_dist == LambdaDist::UniformAboveOne && self.alpha <= 1.0 {
                    return Err(Error::Config(format!(
                        "policy: uniform_above_one requires alpha > 1, got {}",
                        self.alpha
                    )));
                }
            }
            Method::Noise => {
                if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
                    return Err(Error::Config(format!(
                        "policy: noise_sigma = {} must be >= 0",
                        self.noise_sigma
                    )));
                }
            }
        }
        if self.method == Method::FomaRho || self.k_strategy == KStrategy::Rho {
            if !(0.0 < self.rho && self.rho <= 1.0) {
                return Err(Error::Config(format!(
                    "policy: rho = {} must lie in (0, 1]",
                    self.rho
                )));
            }
        }
        if self.latent_layer == 0 {
            return Err(Error::Config(
                "policy: latent_layer is 1-based and must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Effective k-selection strategy: `foma_rho` always counts explained
    /// variance, plain `foma` uses the configured intrinsic-dimension flavor.
    pub fn effective_k_strategy(&self) -> KStrategy {
        if self.method == Method::FomaRho {
            KStrategy::Rho
        } else {
            self.k_strategy
        }
    }
}

/// Draw one `lambda` for a batch from the policy's distribution.
pub fn sample_lambda<R: Rng + ?Sized>(policy: &AugmentPolicy, rng: &mut R) -> Result<f64> {
    match policy.lambda_dist {
        LambdaDist::Beta => {
            let beta = rand_distr::Beta::new(policy.alpha, policy.alpha).map_err(|e| {
                Error::Config(format!("sample_lambda: invalid Beta({0}, {0}): {e}", policy.alpha))
            })?;
            Ok(beta.sample(rng))
        }
        LambdaDist::UniformAboveOne => {
            if policy.alpha <= 1.0 {
                return Err(Error::Config(format!(
                    "sample_lambda: uniform_above_one requires alpha > 1, got {}",
                    policy.alpha
                )));
            }
            Ok(rng.gen_range(1.0..policy.alpha))
        }
    }
}

/// The FOMA transform: concatenate `A = [x | y]`, take the thin SVD, scale
/// one end of the spectrum by `lambda` (see [`SvMode`]), reassemble, and
/// split back into features and labels. Row correspondence is preserved.
pub fn foma_transform(batch: &Batch, lambda: f64, k: usize, sv_mode: SvMode) -> Result<Batch> {
    // `lambda = 1` scales nothing; return the input bit-for-bit so that a
    // degenerate FOMA run reproduces plain training exactly, not just up to
    // SVD round-off.
    if lambda == 1.0 {
        let p = batch.rows().min(batch.x.ncols() + batch.y.ncols());
        if k == 0 || k > p {
            return Err(Error::Input(format!(
                "foma_transform: k = {k} out of range [1, {p}]"
            )));
        }
        return Ok(batch.clone());
    }
    let a = batch.concat();
    let f = thin_svd(&a)?;
    let a_scaled = reconstruct_scaled(&f, lambda, k, sv_mode)?;
    Ok(Batch::split(&a_scaled, batch.x.ncols(), batch.y.ncols()))
}

/// Choose the rank `k` for a batch according to the policy.
///
/// - `id_dataset`: return the cached dataset-level estimate (required).
/// - `id_batch`: run TwoNN on the rows of `[x | y]`; if the batch is too
///   small (fewer than 3 rows), fall back to the dataset cache when present.
/// - `rho`: count explained variance on this batch's singular values.
///
/// The result is always clamped to `[1, p]`, `p = min(b, n + m)`.
pub fn select_k(
    batch: &Batch,
    policy: &AugmentPolicy,
    dataset_id_cache: Option<&IdEstimate>,
) -> Result<usize> {
    let p = batch.rows().min(batch.x.ncols() + batch.y.ncols());
    let k = match policy.effective_k_strategy() {
        KStrategy::IdDataset => {
            let cache = dataset_id_cache.ok_or_else(|| {
                Error::Config("select_k: id_dataset strategy requires a dataset-level cache".into())
            })?;
            cache.k
        }
        KStrategy::IdBatch => {
            if batch.rows() < 3 {
                match dataset_id_cache {
                    Some(cache) => cache.k,
                    None => {
                        return Err(Error::Input(
                            "select_k: batch too small for per-batch TwoNN and no dataset cache"
                                .into(),
                        ))
                    }
                }
            } else {
                twonn_id(&batch.concat(), 0.0)?.k
            }
        }
        KStrategy::Rho => {
            let f = thin_svd(&batch.concat())?;
            explained_variance_k(f.s.as_slice(), policy.rho)?
        }
    };
    Ok(k.clamp(1, p))
}

/// Vanilla mixup: convex combination of each row with its image under
/// `permutation`.
pub fn mixup_transform(batch: &Batch, lambda: f64, permutation: &[usize]) -> Result<Batch> {
    let b = batch.rows();
    if permutation.len() != b {
        return Err(Error::Input(format!(
            "mixup_transform: permutation length {} != batch rows {b}",
            permutation.len()
        )));
    }
    let mut seen = vec![false; b];
    for &p in permutation {
        if p >= b || seen[p] {
            return Err(Error::Input(
                "mixup_transform: permutation is not a bijection on rows".into(),
            ));
        }
        seen[p] = true;
    }

    let mix = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = m.clone();
        for i in 0..b {
            let j = permutation[i];
            for c in 0..m.ncols() {
                out[(i, c)] = lambda * m[(i, c)] + (1.0 - lambda) * m[(j, c)];
            }
        }
        out
    };
    Ok(Batch {
        x: mix(&batch.x),
        y: mix(&batch.y),
    })
}

/// Additive Gaussian noise baseline: independent `N(0, sigma)` per coordinate
/// on both features and labels.
pub fn noise_transform<R: Rng + ?Sized>(batch: &Batch, sigma: f64, rng: &mut R) -> Result<Batch> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!(
            "noise_transform: sigma = {sigma} must be >= 0"
        )));
    }
    if sigma == 0.0 {
        return Ok(batch.clone());
    }
    let normal = rand_distr::Normal::new(0.0, sigma).expect("sigma validated");
    let perturb = |m: &DMatrix<f64>, rng: &mut R| -> DMatrix<f64> {
        let mut out = m.clone();
        for v in out.iter_mut() {
            *v += normal.sample(rng);
        }
        out
    };
    let x = perturb(&batch.x, rng);
    let y = perturb(&batch.y, rng);
    Ok(Batch { x, y })
}
