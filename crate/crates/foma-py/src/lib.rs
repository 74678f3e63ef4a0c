//! Python bindings for the core augmentation toolkit.
//!
//! Matrices cross the boundary as nested lists (`list[list[float]]`), which
//! keeps the module free of a numpy build dependency; converting to numpy on
//! the Python side is one `np.array(...)` call. See `python/smoke_test.py`
//! for building and using the module without maturin.

use foma::augment::Batch;
use foma::linalg::SvMode;
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn to_matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what}: need at least one row")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!(
            "{what}: rows must be non-empty and of equal length"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn parse_sv_mode(s: &str) -> PyResult<SvMode> {
    match s {
        "small" => Ok(SvMode::Small),
        "large" => Ok(SvMode::Large),
        other => Err(PyValueError::new_err(format!(
            "sv_mode must be \"small\" or \"large\", got {other:?}"
        ))),
    }
}

fn err(e: foma::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Thin SVD of a matrix; returns `(u, s, v)` with descending singular
/// values, so that `a == u @ diag(s) @ v.T`.
#[pyfunction]
fn thin_svd(a: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
    let m = to_matrix(&a, "thin_svd")?;
    let f = foma::linalg::thin_svd(&m).map_err(err)?;
    Ok((to_rows(&f.u), f.s.iter().copied().collect(), to_rows(&f.v)))
}

/// Scale the tail (`sv_mode="small"`) or head (`"large"`) of the singular
/// value spectrum of the concatenated `[x | y]` batch by `lam` and split the
/// result back into `(x2, y2)`.
#[pyfunction]
#[pyo3(signature = (x, y, lam, k, sv_mode = "small"))]
fn foma_transform(
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    lam: f64,
    k: usize,
    sv_mode: &str,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let batch = Batch::new(to_matrix(&x, "foma_transform x")?, to_matrix(&y, "foma_transform y")?)
        .map_err(err)?;
    let out = foma::augment::foma_transform(&batch, lam, k, parse_sv_mode(sv_mode)?).map_err(err)?;
    Ok((to_rows(&out.x), to_rows(&out.y)))
}

/// Convex combination of the batch with a permuted copy of itself:
/// `lam * (x, y) + (1 - lam) * (x[perm], y[perm])`.
#[pyfunction]
fn mixup_transform(
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    lam: f64,
    permutation: Vec<usize>,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let batch = Batch::new(to_matrix(&x, "mixup x")?, to_matrix(&y, "mixup y")?).map_err(err)?;
    let out = foma::augment::mixup_transform(&batch, lam, &permutation).map_err(err)?;
    Ok((to_rows(&out.x), to_rows(&out.y)))
}

/// TwoNN intrinsic-dimension estimate of a point cloud; returns
/// `(d_hat, k, n_used, n_duplicates)` where `k` is `d_hat` rounded to the
/// valid singular-value index range.
#[pyfunction]
#[pyo3(signature = (points, discard_fraction = 0.0))]
fn twonn_id(points: Vec<Vec<f64>>, discard_fraction: f64) -> PyResult<(f64, usize, usize, usize)> {
    let m = to_matrix(&points, "twonn_id")?;
    let est = foma::dimension::twonn_id(&m, discard_fraction).map_err(err)?;
    Ok((est.d_hat, est.k, est.n_used, est.n_duplicates))
}

/// Smallest `k` such that the top-`k` singular values hold at least a `rho`
/// fraction of the total singular-value mass (always at least 1).
#[pyfunction]
fn explained_variance_k(s: Vec<f64>, rho: f64) -> PyResult<usize> {
    foma::dimension::explained_variance_k(&s, rho).map_err(err)
}

/// Sample `n` points from a random `d`-dimensional affine subspace of
/// `R^ambient_dim` (a synthetic manifold for estimator checks).
#[pyfunction]
fn synthetic_manifold(d: usize, ambient_dim: usize, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let m = foma::data::synthetic_manifold(d, ambient_dim, n, seed).map_err(err)?;
    Ok(to_rows(&m))
}

#[pymodule]
fn foma_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(thin_svd, m)?)?;
    m.add_function(wrap_pyfunction!(foma_transform, m)?)?;
    m.add_function(wrap_pyfunction!(mixup_transform, m)?)?;
    m.add_function(wrap_pyfunction!(twonn_id, m)?)?;
    m.add_function(wrap_pyfunction!(explained_variance_k, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_manifold, m)?)?;
    Ok(())
}
