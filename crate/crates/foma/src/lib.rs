//! First-order manifold augmentation (FOMA) for regression learning.
//!
//! FOMA augments a training mini-batch by concatenating its features and
//! labels into one matrix `A = [X | Y]`, taking the thin SVD, and scaling the
//! tail of the singular-value spectrum by a random factor `lambda` drawn once
//! per batch. Sampling within the dominant singular subspace amounts to
//! drawing new points from an estimated tangent plane of the data manifold,
//! which is why the augmented pairs stay label-consistent. The number `k` of
//! singular values kept unscaled is chosen either from the data's intrinsic
//! dimension (TwoNN estimator) or by an explained-variance threshold `rho`.
//!
//! The crate provides:
//!
//! - [`linalg`] — thin SVD, scaled reconstruction, perturbation checks;
//! - [`dimension`] — TwoNN intrinsic dimension and explained-variance rank
//!   selection;
//! - [`augment`] — the FOMA transform plus mixup and additive-noise
//!   baselines;
//! - [`batching`] — random and label-proximity ("close") batch construction;
//! - [`model`] — an MLP regressor with hand-written backprop, including the
//!   SVD vector-Jacobian product needed to differentiate through a
//!   latent-site transform;
//! - [`train`] — seeded training loop, validation-based checkpoint
//!   selection, lambda-sweep and label-distribution diagnostics;
//! - [`data`] — CSV ingestion, seeded splits, min-max normalization, and
//!   synthetic manifolds for tests.
//!
//! Everything is `f64`, CPU-only, and deterministic given a seed.

pub mod augment;
pub mod batching;
pub mod data;
pub mod dimension;
pub mod error;
pub mod linalg;
pub mod model;
pub mod train;

pub use augment::{
    foma_transform, mixup_transform, noise_transform, sample_lambda, select_k, ApplySite,
    AugmentPolicy, Batch, KStrategy, LambdaDist, Method, MuProfile,
};
pub use batching::{make_batches, within_batch_label_distance, BatchPlan, BatchStrategy};
pub use data::{load_csv, make_splits, normalize_minmax, synthetic_arc_2d, synthetic_manifold, Dataset, RawTable, Splits};
pub use dimension::{explained_variance_k, twonn_id, IdEstimate};
pub use error::{Error, Result};
pub use linalg::{perturbation_bound_check, reconstruct_scaled, thin_svd, SvMode, SvdFactors};
pub use model::{backward, foma_vjp, mape, mse_loss, rmse, Checkpoint, GradientSet, MlpModel};
pub use train::{
    evaluate, label_distribution, lambda_sweep, train, EpochStats, KSpec, OptimizerKind,
    RunRecord, TrainConfig, TrainOutcome,
};
