//! Fully connected regression network with hand-written reverse-mode
//! gradients, including the differentiation path through the FOMA transform
//! (needed when the augmentation is applied to latent activations).
//!
//! Layout conventions: batches are row-major (`b x features`); layer `i` maps
//! `dims[i] -> dims[i+1]` with weight matrix `w[i]` of shape
//! `dims[i] x dims[i+1]` and bias row of length `dims[i+1]`, so a forward
//! step is `z = a * w + 1 b^T`. Hidden layers use ReLU, the output layer is
//! linear.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{thin_svd, SvMode};

/// Relative clamp for the off-diagonal denominators `1 / (s_i^2 - s_j^2)`
/// (and the `1 / s_i` projector terms) in the SVD vector-Jacobian product.
/// Keeps gradients bounded on near-degenerate spectra at the cost of bias in
/// measure-zero configurations.
pub const SVD_GRAD_EPS: f64 = 1e-8;

/// Multi-layer perceptron for regression.
#[derive(Debug, Clone)]
pub struct MlpModel {
    /// `[n, h_1, .., h_k, m]`.
    pub dims: Vec<usize>,
    /// `weights[i]` has shape `dims[i] x dims[i+1]`.
    pub weights: Vec<DMatrix<f64>>,
    /// `biases[i]` has length `dims[i+1]`.
    pub biases: Vec<DVector<f64>>,
}

impl MlpModel {
    /// Seeded initialization: every weight and bias of layer `i` is drawn
    /// uniformly from `(-1/sqrt(fan_in), +1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "mlp: need at least input and output dims".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("mlp: zero-width layer".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_in, fan_out, |_, _| {
                rng.gen_range(-bound..bound)
            }));
            biases.push(DVector::from_fn(fan_out, |_, _| rng.gen_range(-bound..bound)));
        }
        Ok(MlpModel {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Forward pass from the input, recording every intermediate activation.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<ForwardTrace> {
        self.forward_segment(0, self.n_layers(), x)
    }

    /// Forward pass starting at layer `start` (0 = input), with `a` taken as
    /// the activation entering that layer. Used to resume after a latent
    /// transform.
    pub fn forward_from(&self, start: usize, a: &DMatrix<f64>) -> Result<ForwardTrace> {
        self.forward_segment(start, self.n_layers(), a)
    }

    /// Forward pass through layers `start..end` only. `end == n_layers()`
    /// runs to the model output; a smaller `end` stops at a hidden
    /// activation (this is how the front half of a latent-augmented step is
    /// computed).
    pub fn forward_segment(&self, start: usize, end: usize, a: &DMatrix<f64>) -> Result<ForwardTrace> {
        if start > end || end > self.n_layers() {
            return Err(Error::Config(format!(
                "forward_segment: invalid layer range {start}..{end}"
            )));
        }
        if a.ncols() != self.dims[start] {
            return Err(Error::Input(format!(
                "forward_segment: activation has {} columns, layer {start} expects {}",
                a.ncols(),
                self.dims[start]
            )));
        }
        let mut inputs = vec![a.clone()];
        let mut preacts = Vec::new();
        for l in start..end {
            let cur = inputs.last().unwrap();
            let mut z = cur * &self.weights[l];
            let bias_row = RowDVector::from_iterator(
                self.biases[l].len(),
                self.biases[l].iter().copied(),
            );
            for i in 0..z.nrows() {
                let mut row = z.row_mut(i);
                row += &bias_row;
            }
            let is_output = l + 1 == self.n_layers();
            let act = if is_output {
                z.clone()
            } else {
                z.map(|v| if v > 0.0 { v } else { 0.0 })
            };
            preacts.push(z);
            inputs.push(act);
        }
        Ok(ForwardTrace {
            start,
            end,
            inputs,
            preacts,
        })
    }

    /// Backpropagate `grad_output` (gradient of the loss w.r.t. the model
    /// output) through the layers covered by `trace`. Returns the parameter
    /// gradients for those layers (other slots are zero) and the gradient
    /// w.r.t. the trace's starting activation.
    pub fn backward_from(
        &self,
        trace: &ForwardTrace,
        grad_output: &DMatrix<f64>,
    ) -> (GradientSet, DMatrix<f64>) {
        let mut grads = GradientSet::zeros_like(self);
        let n_layers = self.n_layers();
        let mut g = grad_output.clone();
        for l in (trace.start..trace.end).rev() {
            let li = l - trace.start; // index into the trace
            let is_output = l + 1 == n_layers;
            if !is_output {
                // g currently holds dL/da_{l+1}; pass through ReLU.
                let z = &trace.preacts[li];
                for (gv, zv) in g.iter_mut().zip(z.iter()) {
                    if *zv <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let a_in = &trace.inputs[li];
            grads.d_weights[l] = a_in.transpose() * &g;
            grads.d_biases[l] = DVector::from_iterator(
                g.ncols(),
                (0..g.ncols()).map(|c| g.column(c).sum()),
            );
            g = &g * self.weights[l].transpose();
        }
        (grads, g)
    }

    /// Apply a gradient step `theta <- theta - update` where `update` is
    /// supplied per parameter tensor (the optimizer computes it).
    pub fn apply_update(&mut self, update: &GradientSet) {
        for (w, dw) in self.weights.iter_mut().zip(&update.d_weights) {
            *w -= dw;
        }
        for (b, db) in self.biases.iter_mut().zip(&update.d_biases) {
            *b -= db;
        }
    }
}

/// Activations recorded by a forward pass.
///
/// `inputs[0]` is the activation entering layer `start`; `inputs[j+1]` is the
/// activation produced by layer `start + j`; the last entry is the model
/// output. `preacts[j]` is the pre-activation of layer `start + j`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub start: usize,
    pub end: usize,
    pub inputs: Vec<DMatrix<f64>>,
    pub preacts: Vec<DMatrix<f64>>,
}

impl ForwardTrace {
    /// Activation produced by the last layer of the segment (the model
    /// output when the trace runs to the end).
    pub fn y_hat(&self) -> &DMatrix<f64> {
        self.inputs.last().unwrap()
    }
}

/// One gradient tensor per parameter tensor, shape-matched.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub d_weights: Vec<DMatrix<f64>>,
    pub d_biases: Vec<DVector<f64>>,
}

impl GradientSet {
    pub fn zeros_like(model: &MlpModel) -> Self {
        GradientSet {
            d_weights: model
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            d_biases: model.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    pub fn add(&mut self, other: &GradientSet) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            *a += b;
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            *a += b;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for w in &self.d_weights {
            acc += w.iter().map(|v| v * v).sum::<f64>();
        }
        for b in &self.d_biases {
            acc += b.iter().map(|v| v * v).sum::<f64>();
        }
        acc.sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.d_weights {
            *w *= c;
        }
        for b in &mut self.d_biases {
            *b *= c;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.d_biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Mean squared error over all `b * m` entries.
pub fn mse_loss(y_hat: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(y_hat.shape(), y.shape());
    let n = (y.nrows() * y.ncols()) as f64;
    let mut acc = 0.0;
    for (a, b) in y_hat.iter().zip(y.iter()) {
        let d = a - b;
        acc += d * d;
    }
    acc / n
}

/// Root mean squared error.
pub fn rmse(y_hat: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    mse_loss(y_hat, y).sqrt()
}

/// Mean absolute percentage error (x100), excluding entries with
/// `|y| <= 1e-12`.
#[derive(Debug, Clone, Copy)]
pub struct MapeResult {
    /// `None` when every entry was excluded.
    pub value: Option<f64>,
    /// Number of entries skipped because the reference label was (near) zero.
    pub excluded: usize,
}

pub fn mape(y_hat: &DMatrix<f64>, y: &DMatrix<f64>) -> MapeResult {
    debug_assert_eq!(y_hat.shape(), y.shape());
    let mut acc = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for (a, b) in y_hat.iter().zip(y.iter()) {
        if b.abs() <= 1e-12 {
            excluded += 1;
        } else {
            acc += (b - a).abs() / b.abs();
            used += 1;
        }
    }
    MapeResult {
        value: if used > 0 {
            Some(100.0 * acc / used as f64)
        } else {
            None
        },
        excluded,
    }
}

/// Exact gradients of `mu * mse(y_hat, y)` w.r.t. every parameter, given a
/// full forward trace.
pub fn backward(
    model: &MlpModel,
    trace: &ForwardTrace,
    y: &DMatrix<f64>,
    mu: f64,
) -> GradientSet {
    let g = mse_output_grad(trace.y_hat(), y, mu);
    let (grads, _) = model.backward_from(trace, &g);
    grads
}

/// dL/dy_hat for `L = mu * mse(y_hat, y)`.
pub fn mse_output_grad(y_hat: &DMatrix<f64>, y: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    let n = (y.nrows() * y.ncols()) as f64;
    let mut g = y_hat - y;
    g *= mu * 2.0 / n;
    g
}

/// Vector-Jacobian product of the spectrum-scaling map
/// `a -> reconstruct_scaled(thin_svd(a), lambda, k, sv_mode)`.
///
/// `upstream_grad` is the gradient of the loss w.r.t. the map's output;
/// the return value is the gradient w.r.t. `a`. This is what lets gradients
/// flow from augmented latent activations back into the layers that produced
/// them.
///
/// Uses the standard analytic SVD differential. Off-diagonal factors
/// `1 / (s_i^2 - s_j^2)` and the `1 / s_i` projector terms are clamped at a
/// relative [`SVD_GRAD_EPS`] so near-degenerate spectra yield bounded (if
/// slightly biased) gradients instead of blow-ups.
pub fn foma_vjp(
    a: &DMatrix<f64>,
    lambda: f64,
    k: usize,
    sv_mode: SvMode,
    upstream_grad: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (q, r) = a.shape();
    if upstream_grad.shape() != (q, r) {
        return Err(Error::Input(format!(
            "foma_vjp: upstream gradient shape {:?} != matrix shape {:?}",
            upstream_grad.shape(),
            (q, r)
        )));
    }
    let p = q.min(r);
    if k < 1 || k > p {
        return Err(Error::Config(format!(
            "foma_vjp: k = {k} out of range [1, {p}]"
        )));
    }
    // Identity configurations: the map is exactly the identity, so is its
    // Jacobian.
    if lambda == 1.0 || (sv_mode == SvMode::Small && k == p) {
        return Ok(upstream_grad.clone());
    }

    let f = thin_svd(a)?;
    let (u, s, v) = (&f.u, &f.s, &f.v);
    let s1 = s[0].max(f64::MIN_POSITIVE);

    // Spectrum scale factors d_i (1 on the untouched block, lambda on the
    // scaled one) and the scaled spectrum st = d .* s.
    let mut d = vec![1.0; p];
    match sv_mode {
        SvMode::Small => d[k..].iter_mut().for_each(|x| *x = lambda),
        SvMode::Large => d[..k].iter_mut().for_each(|x| *x = lambda),
    }
    let g = upstream_grad;

    // Gradients of L w.r.t. the factors of B = U diag(d .* s) V^T:
    //   dU = G V diag(st),  ds_i = d_i (U^T G V)_ii,  dV = G^T U diag(st).
    let gv = g * v; // q x p
    let gtu = g.transpose() * u; // r x p
    let utgv = u.transpose() * &gv; // p x p

    let mut du = gv.clone();
    let mut dv = gtu.clone();
    for j in 0..p {
        let st = d[j] * s[j];
        for i in 0..q {
            du[(i, j)] *= st;
        }
        for i in 0..r {
            dv[(i, j)] *= st;
        }
    }
    let ds: Vec<f64> = (0..p).map(|i| d[i] * utgv[(i, i)]).collect();

    // Core term: U [ F.(U^T dU - dU^T U) S + S F.(V^T dV - dV^T V) + diag(ds) ] V^T
    // with F_ij = 1 / (s_j^2 - s_i^2), clamped.
    let utdu = u.transpose() * &du;
    let vtdv = v.transpose() * &dv;
    let eps = SVD_GRAD_EPS * s1 * s1;
    let fmat = |i: usize, j: usize| -> f64 {
        if i == j {
            return 0.0;
        }
        let denom = s[j] * s[j] - s[i] * s[i];
        let clamped = if denom >= 0.0 {
            denom.max(eps)
        } else {
            denom.min(-eps)
        };
        1.0 / clamped
    };

    let mut core = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let ju = fmat(i, j) * (utdu[(i, j)] - utdu[(j, i)]);
            let jv = fmat(i, j) * (vtdv[(i, j)] - vtdv[(j, i)]);
            core[(i, j)] = ju * s[j] + s[i] * jv;
        }
        core[(i, i)] += ds[i];
    }
    let mut out = u * core * v.transpose();

    // Projector terms for the non-square directions.
    let sinv: Vec<f64> = s.iter().map(|&x| 1.0 / x.max(SVD_GRAD_EPS * s1)).collect();
    if q > p {
        // (I - U U^T) dU S^-1 V^T
        let mut du_sinv = du.clone();
        for j in 0..p {
            for i in 0..q {
                du_sinv[(i, j)] *= sinv[j];
            }
        }
        let term = &du_sinv - u * (u.transpose() * &du_sinv);
        out += term * v.transpose();
    }
    if r > p {
        // U S^-1 dV^T (I - V V^T)
        let mut dv_sinv = dv.clone();
        for j in 0..p {
            for i in 0..r {
                dv_sinv[(i, j)] *= sinv[j];
            }
        }
        let term = &dv_sinv - v * (v.transpose() * &dv_sinv);
        out += u * term.transpose();
    }

    Ok(out)
}

/// Serializable checkpoint payload (see the repository README for the format
/// contract). Weights are stored row-major, one nested list per layer.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_model(model: &MlpModel) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            layer_dims: model.dims.clone(),
            weights: model
                .weights
                .iter()
                .map(|w| {
                    (0..w.nrows())
                        .map(|i| w.row(i).iter().copied().collect())
                        .collect()
                })
                .collect(),
            biases: model.biases.iter().map(|b| b.iter().copied().collect()).collect(),
        }
    }

    pub fn into_model(self) -> Result<MlpModel> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Io(format!(
                "checkpoint: unsupported schema_version {}",
                self.schema_version
            )));
        }
        let dims = self.layer_dims;
        if dims.len() < 2
            || self.weights.len() != dims.len() - 1
            || self.biases.len() != dims.len() - 1
        {
            return Err(Error::Io("checkpoint: inconsistent layer structure".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, (wrows, brow)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (rows, cols) = (dims[l], dims[l + 1]);
            if wrows.len() != rows || wrows.iter().any(|r| r.len() != cols) || brow.len() != cols {
                return Err(Error::Io(format!(
                    "checkpoint: layer {l} tensor shape mismatch"
                )));
            }
            weights.push(DMatrix::from_fn(rows, cols, |i, j| wrows[i][j]));
            biases.push(DVector::from_vec(brow.clone()));
        }
        Ok(MlpModel {
            dims,
            weights,
            biases,
        })
    }
}
