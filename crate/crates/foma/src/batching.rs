//! Mini-batch construction: random shuffling, and "close" batching that
//! groups samples whose labels are mutually near in Euclidean distance.
//!
//! Close batching matters for FOMA because the SVD of a batch estimates a
//! tangent plane of the data manifold; nearby samples give a more local (and
//! hence more faithful) plane than a random scatter.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStrategy {
    Random,
    Close,
}

/// A partition of `[0, N)` into batches.
///
/// Indices are disjoint and cover the dataset; the last batch may be short.
/// The trailing short batch is kept here (evaluation uses every sample); the
/// training loop drops batches with fewer than 3 rows, since an SVD-estimated
/// tangent plane is degenerate on 1–2 points.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
    pub strategy: BatchStrategy,
    pub batch_size: usize,
}

/// Build a batch plan over `N` samples with labels `y` (`N x m`).
///
/// - `Random`: shuffle all indices, chunk into `batch_size` groups.
/// - `Close`: order samples by label proximity, chunk consecutively, then
///   shuffle the *order of the groups*. Membership is a pure function of the
///   labels, so it stays fixed across epochs while the update order
///   decorrelates. For `m = 1` the proximity order is simply the sort by
///   label value — the exact Euclidean grouping in one dimension. For
///   `m > 1` a greedy nearest-neighbor chain is used (start from the label
///   with the smallest norm, repeatedly append the nearest unused label);
///   the start is deterministic so that membership stays fixed.
pub fn make_batches<R: Rng + ?Sized>(
    y: &DMatrix<f64>,
    strategy: BatchStrategy,
    batch_size: usize,
    rng: &mut R,
) -> Result<BatchPlan> {
    let n = y.nrows();
    if n == 0 {
        return Err(Error::Input("make_batches: empty dataset".into()));
    }
    if batch_size == 0 || batch_size > n {
        return Err(Error::Config(format!(
            "make_batches: batch_size = {batch_size} must lie in [1, {n}]"
        )));
    }

    let order: Vec<usize> = match strategy {
        BatchStrategy::Random => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            idx
        }
        BatchStrategy::Close => proximity_order(y),
    };

    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if strategy == BatchStrategy::Close {
        batches.shuffle(rng);
    }

    Ok(BatchPlan {
        batches,
        strategy,
        batch_size,
    })
}

/// Deterministic label-proximity ordering (see [`make_batches`]).
fn proximity_order(y: &DMatrix<f64>) -> Vec<usize> {
    let n = y.nrows();
    if y.ncols() == 1 {
        let mut idx: Vec<usize> = (0..n).collect();
        // Stable tie-break on the index keeps the order fully deterministic.
        idx.sort_by(|&a, &b| {
            y[(a, 0)]
                .partial_cmp(&y[(b, 0)])
                .unwrap()
                .then(a.cmp(&b))
        });
        return idx;
    }

    // Greedy nearest-neighbor chaining on labels.
    let norm2 = |i: usize| -> f64 { (0..y.ncols()).map(|c| y[(i, c)] * y[(i, c)]).sum() };
    let dist2 = |i: usize, j: usize| -> f64 {
        (0..y.ncols())
            .map(|c| {
                let d = y[(i, c)] - y[(j, c)];
                d * d
            })
            .sum()
    };
    let start = (0..n)
        .min_by(|&a, &b| norm2(a).partial_cmp(&norm2(b)).unwrap().then(a.cmp(&b)))
        .expect("non-empty");
    let mut used = vec![false; n];
    let mut order = Vec::with_capacity(n);
    used[start] = true;
    order.push(start);
    for _ in 1..n {
        let last = *order.last().unwrap();
        let next = (0..n)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| {
                dist2(last, a)
                    .partial_cmp(&dist2(last, b))
                    .unwrap()
                    .then(a.cmp(&b))
            })
            .expect("unused index remains");
        used[next] = true;
        order.push(next);
    }
    order
}

/// Mean over batches of the mean pairwise Euclidean distance between labels
/// within the batch. Singleton batches contribute 0.
///
/// This is the diagnostic behind the close-batching comparison: a plan whose
/// batches are label-local scores lower than a random partition.
pub fn within_batch_label_distance(plan: &BatchPlan, y: &DMatrix<f64>) -> f64 {
    if plan.batches.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for batch in &plan.batches {
        let b = batch.len();
        if b < 2 {
            continue; // contributes 0
        }
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..b {
            for j in (i + 1)..b {
                let mut d2 = 0.0;
                for c in 0..y.ncols() {
                    let d = y[(batch[i], c)] - y[(batch[j], c)];
                    d2 += d * d;
                }
                sum += d2.sqrt();
                pairs += 1;
            }
        }
        total += sum / pairs as f64;
    }
    total / plan.batches.len() as f64
}
