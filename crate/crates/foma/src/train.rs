//! Seeded training loop: batching, augmentation, parameter updates,
//! validation-based checkpoint selection, and the lambda-sweep diagnostic.
//!
//! One training run is strictly sequential and fully determined by its
//! config (including the seed); identical configs produce identical
//! [`RunRecord`]s on the same platform. Multiple runs can execute in parallel
//! with independent state.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{
    foma_transform, mixup_transform, noise_transform, sample_lambda, select_k, ApplySite,
    AugmentPolicy, Batch, KStrategy, Method,
};
use crate::batching::{make_batches, BatchStrategy};
use crate::data::Dataset;
use crate::dimension::{explained_variance_k, twonn_id, IdEstimate};
use crate::error::{Error, Result};
use crate::linalg::{thin_svd, SvMode};
use crate::model::{
    backward, foma_vjp, mape, mse_loss, mse_output_grad, rmse, GradientSet, MlpModel,
};

/// Minimum batch size used during training; smaller (trailing) batches are
/// skipped because an SVD tangent-plane estimate on 1–2 rows is degenerate.
pub const MIN_TRAIN_BATCH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub policy: AugmentPolicy,
    pub batch_strategy: BatchStrategy,
    pub optimizer: OptimizerKind,
    /// Hidden layer widths; the full architecture is
    /// `[n_features, hidden.., m_labels]` with ReLU hidden activations.
    pub hidden_dims: Vec<usize>,
    /// Optional global gradient max-norm (divergence recovery); recorded in
    /// the run record when it ever fires.
    pub grad_clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "config: learning_rate = {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("config: epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("config: batch_size must be >= 1".into()));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!(
                    "config: grad_clip_norm = {c} must be positive"
                )));
            }
        }
        self.policy.validate()
    }
}

/// Per-epoch metric snapshot. `train_loss` is the mean optimized (possibly
/// augmented and mu-scaled) batch loss; `train_rmse` is plain unaugmented
/// RMSE on the training split, which is what the generalization gap uses.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub test_rmse: f64,
}

/// Result of one seeded training run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub history: Vec<EpochStats>,
    /// Epoch (0-based) with the lowest validation RMSE.
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    /// Test metrics of the best-validation checkpoint.
    pub test_rmse: f64,
    pub test_mape: Option<f64>,
    pub test_mape_excluded: usize,
    /// `test_rmse - train_rmse` at the final epoch (generalization gap).
    pub final_gap: f64,
    pub param_count: usize,
    pub grad_clip_activated: bool,
    pub config: TrainConfig,
}

/// A finished run: the record plus the best-validation model for
/// checkpointing or sweeps.
#[derive(Debug)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub model: MlpModel,
}

struct Adam {
    m: GradientSet,
    v: GradientSet,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(model: &MlpModel, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            m: GradientSet::zeros_like(model),
            v: GradientSet::zeros_like(model),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// Turn raw gradients into the update tensor (to be subtracted).
    fn step(&mut self, grads: &GradientSet, lr: f64) -> GradientSet {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut update = grads.clone();
        for layer in 0..grads.d_weights.len() {
            for idx in 0..grads.d_weights[layer].len() {
                let g = grads.d_weights[layer][idx];
                let m = &mut self.m.d_weights[layer][idx];
                let v = &mut self.v.d_weights[layer][idx];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                update.d_weights[layer][idx] =
                    lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
            for idx in 0..grads.d_biases[layer].len() {
                let g = grads.d_biases[layer][idx];
                let m = &mut self.m.d_biases[layer][idx];
                let v = &mut self.v.d_biases[layer][idx];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                update.d_biases[layer][idx] =
                    lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
        update
    }
}

/// Run one seeded training job on the dataset's splits.
///
/// Per batch: draw one lambda, select `k`, apply the policy transform at the
/// configured site(s), compute the (mu-scaled) MSE on the augmented pair,
/// and update parameters. Metrics are tracked each epoch and the checkpoint
/// with the lowest validation RMSE is restored at the end.
///
/// Fails with [`Error::Numeric`] (carrying epoch/batch diagnostics) if the
/// loss or gradients stop being finite.
pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_x, train_y) = dataset.train_xy();
    let (val_x, val_y) = dataset.val_xy();
    let (test_x, test_y) = dataset.test_xy();
    let n_features = train_x.ncols();
    let m_labels = train_y.ncols();
    if cfg.batch_size > train_x.nrows() {
        return Err(Error::Config(format!(
            "config: batch_size {} exceeds training split size {}",
            cfg.batch_size,
            train_x.nrows()
        )));
    }

    let mut dims = vec![n_features];
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(m_labels);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::new(&dims, &mut rng)?;
    let param_count = model.param_count();

    // Dataset-level intrinsic-dimension cache, shared across batches.
    let uses_foma = matches!(cfg.policy.method, Method::Foma | Method::FomaRho);
    let id_cache: Option<IdEstimate> = if uses_foma
        && matches!(
            cfg.policy.effective_k_strategy(),
            KStrategy::IdDataset | KStrategy::IdBatch
        ) {
        let joint = Batch::new(train_x.clone(), train_y.clone())?.concat();
        Some(twonn_id(&joint, 0.0)?)
    } else {
        None
    };

    let mut adam = match cfg.optimizer {
        OptimizerKind::Adam { beta1, beta2, eps } => {
            Some(Adam::new(&model, beta1, beta2, eps))
        }
        OptimizerKind::Sgd => None,
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, MlpModel)> = None;
    let mut grad_clip_activated = false;

    for epoch in 0..cfg.epochs {
        let plan = make_batches(&train_y, cfg.batch_strategy, cfg.batch_size, &mut rng)?;
        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;

        for (bi, indices) in plan.batches.iter().enumerate() {
            if indices.len() < MIN_TRAIN_BATCH {
                continue;
            }
            let bx = DMatrix::from_fn(indices.len(), n_features, |i, j| train_x[(indices[i], j)]);
            let by = DMatrix::from_fn(indices.len(), m_labels, |i, j| train_y[(indices[i], j)]);
            let batch = Batch::new(bx, by)?;

            let (loss, mut grads) =
                train_step(&model, &batch, &cfg.policy, id_cache.as_ref(), &mut rng)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}, batch {bi}: loss = {loss}"
                )));
            }
            if let Some(max_norm) = cfg.grad_clip_norm {
                let norm = grads.l2_norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                    grad_clip_activated = true;
                }
            }
            let update = match &mut adam {
                Some(adam) => adam.step(&grads, cfg.learning_rate),
                None => {
                    let mut u = grads.clone();
                    u.scale(cfg.learning_rate);
                    u
                }
            };
            model.apply_update(&update);
            loss_sum += loss;
            loss_batches += 1;
        }

        let train_rmse_plain = rmse(model.forward(&train_x)?.y_hat(), &train_y);
        let val_rmse = rmse(model.forward(&val_x)?.y_hat(), &val_y);
        let test_rmse = rmse(model.forward(&test_x)?.y_hat(), &test_y);
        if !(train_rmse_plain.is_finite() && val_rmse.is_finite() && test_rmse.is_finite()) {
            return Err(Error::Numeric(format!(
                "training diverged at epoch {epoch}: non-finite evaluation metrics"
            )));
        }
        history.push(EpochStats {
            epoch,
            train_loss: if loss_batches > 0 {
                loss_sum / loss_batches as f64
            } else {
                f64::NAN
            },
            train_rmse: train_rmse_plain,
            val_rmse,
            test_rmse,
        });

        let better = match &best {
            None => true,
            Some((_, best_val, _)) => val_rmse < *best_val,
        };
        if better {
            best = Some((epoch, val_rmse, model.clone()));
        }
    }

    let (best_epoch, best_val_rmse, best_model) = best.expect("epochs >= 1");
    let test_trace = best_model.forward(&test_x)?;
    let test_rmse_best = rmse(test_trace.y_hat(), &test_y);
    let test_mape = mape(test_trace.y_hat(), &test_y);
    let last = history.last().expect("non-empty history");
    let final_gap = last.test_rmse - last.train_rmse;

    Ok(TrainOutcome {
        record: RunRecord {
            seed: cfg.seed,
            history,
            best_epoch,
            best_val_rmse,
            test_rmse: test_rmse_best,
            test_mape: test_mape.value,
            test_mape_excluded: test_mape.excluded,
            final_gap,
            param_count,
            grad_clip_activated,
            config: cfg.clone(),
        },
        model: best_model,
    })
}

/// One optimization step's loss and gradients for a batch under the policy.
fn train_step(
    model: &MlpModel,
    batch: &Batch,
    policy: &AugmentPolicy,
    id_cache: Option<&IdEstimate>,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, GradientSet)> {
    match policy.method {
        Method::Erm => {
            let trace = model.forward(&batch.x)?;
            let loss = mse_loss(trace.y_hat(), &batch.y);
            let grads = backward(model, &trace, &batch.y, 1.0);
            Ok((loss, grads))
        }
        Method::Mixup => {
            let lambda = sample_lambda(policy, rng)?;
            let mut perm: Vec<usize> = (0..batch.rows()).collect();
            perm.shuffle(rng);
            let mixed = mixup_transform(batch, lambda, &perm)?;
            let trace = model.forward(&mixed.x)?;
            let loss = mse_loss(trace.y_hat(), &mixed.y);
            let grads = backward(model, &trace, &mixed.y, 1.0);
            Ok((loss, grads))
        }
        Method::Noise => {
            let noisy = noise_transform(batch, policy.noise_sigma, rng)?;
            let trace = model.forward(&noisy.x)?;
            let loss = mse_loss(trace.y_hat(), &noisy.y);
            let grads = backward(model, &trace, &noisy.y, 1.0);
            Ok((loss, grads))
        }
        Method::Foma | Method::FomaRho => {
            let lambda = sample_lambda(policy, rng)?;
            let mu = policy.mu_profile.mu(lambda);
            let input_batch = match policy.apply_site {
                ApplySite::Input | ApplySite::Both => {
                    let k = select_k(batch, policy, id_cache)?;
                    foma_transform(batch, lambda, k, policy.sv_mode)?
                }
                ApplySite::Latent => batch.clone(),
            };
            match policy.apply_site {
                ApplySite::Input => {
                    let trace = model.forward(&input_batch.x)?;
                    let loss = mu * mse_loss(trace.y_hat(), &input_batch.y);
                    let grads = backward(model, &trace, &input_batch.y, mu);
                    Ok((loss, grads))
                }
                ApplySite::Latent | ApplySite::Both => {
                    latent_step(model, &input_batch, policy, id_cache, lambda, mu)
                }
            }
        }
    }
}

/// Forward to the latent site, transform `[z | y]`, finish the forward pass,
/// and backpropagate — through the transform's SVD unless the policy asks
/// for detached activations.
fn latent_step(
    model: &MlpModel,
    batch: &Batch,
    policy: &AugmentPolicy,
    id_cache: Option<&IdEstimate>,
    lambda: f64,
    mu: f64,
) -> Result<(f64, GradientSet)> {
    // `latent_layer` is 1-based over hidden layers; the transform applies to
    // the activation *after* that hidden layer, i.e. entering weight layer
    // `site`.
    let n_hidden = model.n_layers() - 1;
    if n_hidden == 0 {
        return Err(Error::Config(
            "latent site requires at least one hidden layer".into(),
        ));
    }
    let site = policy.latent_layer.min(n_hidden);

    let front = model.forward_segment(0, site, &batch.x)?;
    let z = front.y_hat().clone();
    let latent_batch = Batch::new(z, batch.y.clone())?;
    let k = select_k(&latent_batch, policy, id_cache)?;
    let augmented = foma_transform(&latent_batch, lambda, k, policy.sv_mode)?;

    let back = model.forward_segment(site, model.n_layers(), &augmented.x)?;
    let loss = mu * mse_loss(back.y_hat(), &augmented.y);
    let g_out = mse_output_grad(back.y_hat(), &augmented.y, mu);
    let (mut grads, g_z_aug) = model.backward_from(&back, &g_out);

    if !policy.detached_latent {
        // Loss depends on the transform through both outputs: the augmented
        // activation z' (via the remaining layers) and the augmented target
        // y' (dL/dy' = -dL/dy_hat for MSE). Stack both and pull back through
        // the SVD map, then keep backpropagating the z-part into the front
        // layers.
        let b = batch.rows();
        let (nz, m) = (augmented.x.ncols(), augmented.y.ncols());
        let mut upstream = DMatrix::zeros(b, nz + m);
        upstream.view_mut((0, 0), (b, nz)).copy_from(&g_z_aug);
        upstream.view_mut((0, nz), (b, m)).copy_from(&(-&g_out));
        let a = latent_batch.concat();
        let d_a = foma_vjp(&a, lambda, k, policy.sv_mode, &upstream)?;
        let g_z = d_a.columns(0, nz).into_owned();
        let (front_grads, _) = model.backward_from(&front, &g_z);
        grads.add(&front_grads);
    }

    Ok((loss, grads))
}

/// Plain evaluation: RMSE and MAPE of the model on `(x, y)`.
pub fn evaluate(model: &MlpModel, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(f64, crate::model::MapeResult)> {
    let trace = model.forward(x)?;
    Ok((rmse(trace.y_hat(), y), mape(trace.y_hat(), y)))
}

/// How the sweep / histogram utilities choose `k` per batch.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum KSpec {
    /// Use this `k` everywhere (clamped to each batch's spectrum length).
    Fixed(usize),
    /// Explained-variance counting with this threshold on each batch.
    Rho(f64),
}

fn resolve_k(kspec: KSpec, batch: &Batch) -> Result<usize> {
    let p = batch.rows().min(batch.x.ncols() + batch.y.ncols());
    match kspec {
        KSpec::Fixed(k) => Ok(k.clamp(1, p)),
        KSpec::Rho(rho) => {
            let f = thin_svd(&batch.concat())?;
            explained_variance_k(f.s.as_slice(), rho)
        }
    }
}

/// Deterministic evaluation partition: consecutive chunks, trailing short
/// batch kept.
fn eval_batches(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..n)
        .collect::<Vec<_>>()
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect()
}

/// Lambda sweep: for each lambda on a uniform grid over `[0, 1]`, apply the
/// FOMA transform to every evaluation batch and record the MSE of the model's
/// predictions on transformed features against transformed labels.
///
/// The grid includes both endpoints, so the last point (lambda = 1) equals
/// plain evaluation MSE.
pub fn lambda_sweep(
    model: &MlpModel,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    batch_size: usize,
    kspec: KSpec,
    sv_mode: SvMode,
    grid: usize,
) -> Result<Vec<(f64, f64)>> {
    if x.nrows() == 0 || x.nrows() != y.nrows() {
        return Err(Error::Input("lambda_sweep: empty or mismatched split".into()));
    }
    if grid < 2 {
        return Err(Error::Config("lambda_sweep: grid must have >= 2 points".into()));
    }
    let batches = eval_batches(x.nrows(), batch_size);
    let mut curve = Vec::with_capacity(grid);
    for gi in 0..grid {
        let lambda = gi as f64 / (grid - 1) as f64;
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for indices in &batches {
            let bx = DMatrix::from_fn(indices.len(), x.ncols(), |i, j| x[(indices[i], j)]);
            let by = DMatrix::from_fn(indices.len(), y.ncols(), |i, j| y[(indices[i], j)]);
            let batch = Batch::new(bx, by)?;
            let k = resolve_k(kspec, &batch)?;
            let transformed = foma_transform(&batch, lambda, k, sv_mode)?;
            let trace = model.forward(&transformed.x)?;
            for (a, b) in trace.y_hat().iter().zip(transformed.y.iter()) {
                let d = a - b;
                sq_sum += d * d;
            }
            count += indices.len() * y.ncols();
        }
        curve.push((lambda, sq_sum / count as f64));
    }
    Ok(curve)
}

/// Binned label distributions for the original data and each requested
/// lambda (labels after the FOMA transform). All histograms share the same
/// bin edges, wide enough to cover every observed value.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LabelDistribution {
    pub bin_edges: Vec<f64>,
    pub original: Vec<usize>,
    pub per_lambda: Vec<(f64, Vec<usize>)>,
}

pub fn label_distribution(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambdas: &[f64],
    batch_size: usize,
    kspec: KSpec,
    sv_mode: SvMode,
    n_bins: usize,
) -> Result<LabelDistribution> {
    if n_bins == 0 {
        return Err(Error::Config("label_distribution: n_bins must be >= 1".into()));
    }
    if x.nrows() == 0 || x.nrows() != y.nrows() {
        return Err(Error::Input(
            "label_distribution: empty or mismatched split".into(),
        ));
    }
    let batches = eval_batches(x.nrows(), batch_size);

    // Transform once per lambda, collecting the label values.
    let mut transformed: Vec<(f64, Vec<f64>)> = Vec::new();
    for &lambda in lambdas {
        let mut values = Vec::with_capacity(y.len());
        for indices in &batches {
            let bx = DMatrix::from_fn(indices.len(), x.ncols(), |i, j| x[(indices[i], j)]);
            let by = DMatrix::from_fn(indices.len(), y.ncols(), |i, j| y[(indices[i], j)]);
            let batch = Batch::new(bx, by)?;
            let k = resolve_k(kspec, &batch)?;
            let t = foma_transform(&batch, lambda, k, sv_mode)?;
            values.extend(t.y.iter().copied());
        }
        transformed.push((lambda, values));
    }

    let mut lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (_, values) in &transformed {
        for &v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi <= lo {
        hi = lo + 1.0; // all labels identical: one wide bin
    }
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64).collect();
    let bin_of = |v: f64| -> usize {
        let idx = ((v - lo) / width).floor() as i64;
        idx.clamp(0, n_bins as i64 - 1) as usize
    };

    let mut original = vec![0usize; n_bins];
    for &v in y.iter() {
        original[bin_of(v)] += 1;
    }
    let per_lambda = transformed
        .into_iter()
        .map(|(lambda, values)| {
            let mut hist = vec![0usize; n_bins];
            for v in values {
                hist[bin_of(v)] += 1;
            }
            (lambda, hist)
        })
        .collect();

    Ok(LabelDistribution {
        bin_edges: edges,
        original,
        per_lambda,
    })
}
