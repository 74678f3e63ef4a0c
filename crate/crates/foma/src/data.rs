//! Dataset ingestion, normalization, splits, and synthetic generators.
//!
//! Raw dataset files are supplied by the user as comma-separated CSV (see the
//! repository README for provenance, fetch instructions, and checksums); this
//! module parses them, builds seeded train/val/test splits, and fits min-max
//! feature normalization on the training split only. Labels are never
//! normalized — reported errors live on the original label scale.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A parsed numeric table: features `x` (N x n) and labels `y` (N x m).
#[derive(Debug, Clone)]
pub struct RawTable {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

/// Load a comma-separated file whose columns are `n_feature_cols` features
/// followed by `m_label_cols` labels. With `header = true` the first row is
/// skipped. Any row with a wrong column count or a non-numeric cell is
/// rejected with its (1-based, post-header) row number.
pub fn load_csv(
    path: &Path,
    n_feature_cols: usize,
    m_label_cols: usize,
    header: bool,
) -> Result<RawTable> {
    if n_feature_cols == 0 || m_label_cols == 0 {
        return Err(Error::Config(
            "load_csv: need at least one feature and one label column".into(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(format!("load_csv: cannot open {}: {e}", path.display())))?;

    let want = n_feature_cols + m_label_cols;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let rownum = i + 1;
        let record = record?;
        if record.len() != want {
            return Err(Error::Io(format!(
                "load_csv: row {rownum} has {} columns, expected {want}",
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(want);
        for cell in record.iter() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Io(format!("load_csv: row {rownum}: non-numeric cell {cell:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::Io(format!(
                    "load_csv: row {rownum}: non-finite value {v}"
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Io(format!("load_csv: {} is empty", path.display())));
    }

    let n = rows.len();
    let x = DMatrix::from_fn(n, n_feature_cols, |i, j| rows[i][j]);
    let y = DMatrix::from_fn(n, m_label_cols, |i, j| rows[i][n_feature_cols + j]);
    Ok(RawTable { x, y })
}

/// Disjoint train/val/test index sets.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `[0, n)` partitioned into the three requested sizes
/// (which must sum to at most `n`).
pub fn make_splits(n: usize, sizes: (usize, usize, usize), seed: u64) -> Result<Splits> {
    let (a, b, c) = sizes;
    if a + b + c > n {
        return Err(Error::Config(format!(
            "make_splits: sizes {a}+{b}+{c} exceed dataset size {n}"
        )));
    }
    if a == 0 {
        return Err(Error::Config("make_splits: empty training split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    Ok(Splits {
        train: idx[..a].to_vec(),
        val: idx[a..a + b].to_vec(),
        test: idx[a + b..a + b + c].to_vec(),
    })
}

/// Per-feature min-max statistics fitted on the training split.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NormRecord {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    /// Features whose training range was empty (mapped to all-zero).
    pub constant: Vec<bool>,
}

/// A dataset with splits and (optionally) fitted normalization.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub splits: Splits,
    pub norm: Option<NormRecord>,
}

impl Dataset {
    pub fn new(table: RawTable, splits: Splits) -> Result<Self> {
        let n = table.x.nrows();
        for &i in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if i >= n {
                return Err(Error::Input(format!(
                    "dataset: split index {i} out of range for {n} rows"
                )));
            }
        }
        Ok(Dataset {
            x: table.x,
            y: table.y,
            splits,
            norm: None,
        })
    }

    /// Rows of `x`/`y` selected by an index set.
    pub fn gather(&self, idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(idx.len(), self.x.ncols(), |i, j| self.x[(idx[i], j)]);
        let y = DMatrix::from_fn(idx.len(), self.y.ncols(), |i, j| self.y[(idx[i], j)]);
        (x, y)
    }

    pub fn train_xy(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        self.gather(&self.splits.train)
    }

    pub fn val_xy(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        self.gather(&self.splits.val)
    }

    pub fn test_xy(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        self.gather(&self.splits.test)
    }
}

/// Min-max normalize features to `[0, 1]` using training-split statistics;
/// labels are left untouched. Values outside the training range map outside
/// `[0, 1]` (no clamping). Constant features are mapped to 0 and flagged in
/// the returned record. Already-normalized data re-normalized with its own
/// statistics is unchanged (idempotence).
pub fn normalize_minmax(dataset: &Dataset) -> Result<Dataset> {
    let n_feat = dataset.x.ncols();
    let mut mins = vec![f64::INFINITY; n_feat];
    let mut maxs = vec![f64::NEG_INFINITY; n_feat];
    if dataset.splits.train.is_empty() {
        return Err(Error::Input("normalize_minmax: empty training split".into()));
    }
    for &i in &dataset.splits.train {
        for j in 0..n_feat {
            let v = dataset.x[(i, j)];
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    let constant: Vec<bool> = mins.iter().zip(&maxs).map(|(lo, hi)| hi <= lo).collect();

    let mut x = dataset.x.clone();
    for j in 0..n_feat {
        let range = maxs[j] - mins[j];
        for i in 0..x.nrows() {
            x[(i, j)] = if constant[j] {
                0.0
            } else {
                (x[(i, j)] - mins[j]) / range
            };
        }
    }
    Ok(Dataset {
        x,
        y: dataset.y.clone(),
        splits: dataset.splits.clone(),
        norm: Some(NormRecord {
            mins,
            maxs,
            constant,
        }),
    })
}

/// Points along a smooth one-dimensional curve in 2D (a circular arc), with
/// optional Gaussian jitter. The first coordinate is the feature, the second
/// the label, so the output doubles as a transform demo dataset with
/// `n = m = 1`. Splits are a seeded 60/20/20 partition.
pub fn synthetic_arc_2d(n: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Config("synthetic_arc_2d: need n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, noise_sigma.max(0.0))
        .map_err(|e| Error::Config(format!("synthetic_arc_2d: bad noise_sigma: {e}")))?;
    let mut x = DMatrix::zeros(n, 1);
    let mut y = DMatrix::zeros(n, 1);
    for i in 0..n {
        // Uniform angle over a two-thirds arc keeps the curve single-valued
        // enough in the first coordinate to be an interesting regression toy.
        let theta = rng.gen_range(std::f64::consts::FRAC_PI_6..(5.0 * std::f64::consts::FRAC_PI_6));
        let (mut px, mut py) = (theta.cos(), theta.sin());
        if noise_sigma > 0.0 {
            px += rand_distr::Distribution::sample(&normal, &mut rng);
            py += rand_distr::Distribution::sample(&normal, &mut rng);
        }
        x[(i, 0)] = px;
        y[(i, 0)] = py;
    }
    let n_train = (n * 6) / 10;
    let n_val = (n * 2) / 10;
    let n_test = n - n_train - n_val;
    let splits = make_splits(n, (n_train.max(1), n_val, n_test), seed)?;
    Dataset::new(RawTable { x, y }, splits)
}

/// Uniform samples on a random `intrinsic_d`-dimensional affine patch
/// embedded (and randomly rotated) in `ambient_d` dimensions. TwoNN test
/// fixture: the ground-truth intrinsic dimension is `intrinsic_d` by
/// construction.
pub fn synthetic_manifold(
    intrinsic_d: usize,
    ambient_d: usize,
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if intrinsic_d < 1 || intrinsic_d > ambient_d {
        return Err(Error::Config(format!(
            "synthetic_manifold: need 1 <= intrinsic_d ({intrinsic_d}) <= ambient_d ({ambient_d})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = DMatrix::zeros(n, ambient_d);
    for i in 0..n {
        for j in 0..intrinsic_d {
            cloud[(i, j)] = rng.gen_range(0.0..1.0);
        }
    }
    // Random rotation: Q from the QR decomposition of a Gaussian matrix.
    let normal = rand_distr::StandardNormal;
    let gauss = DMatrix::from_fn(ambient_d, ambient_d, |_, _| {
        rand_distr::Distribution::sample(&normal, &mut rng)
    });
    let q = gauss.qr().q();
    Ok(cloud * q)
}
