//! Python bindings. Points, frames and matrices are plain nested lists;
//! frames and precision matrices are given by rows.

use framestat::framebundle::{FramePoint, SymPoint};
use framestat::geometry::registry::{from_name, REGISTRY_KEYS};
use framestat::statistics::{self, Dataset, EstimatorOptions, MppOptions};
use framestat::stochastics::{self, BrownianConfig};
use framestat::subriemannian::{self, FiberShootingOptions};
use framestat::{ChartManifold, Error, SampledPath};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn manifold(name: &str) -> PyResult<ChartManifold> {
    from_name(name).map_err(py_err)
}

fn rows_to_matrix(rows: &[Vec<f64>], n: usize, what: &str) -> PyResult<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err(format!("{what} must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn frame(m: &ChartManifold, x: &[f64], rows: Option<Vec<Vec<f64>>>) -> PyResult<FramePoint> {
    match rows {
        Some(r) => FramePoint::from_rows(x, &r).map_err(py_err),
        None => FramePoint::orthonormal(m, x).map_err(py_err),
    }
}

fn matrix_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

fn path_points(p: &SampledPath) -> Vec<Vec<f64>> {
    p.values.iter().map(|v| v.as_slice().to_vec()).collect()
}

/// Names accepted by the manifold registry.
#[pyfunction]
fn manifolds() -> Vec<&'static str> {
    REGISTRY_KEYS.to_vec()
}

/// Fiber distance from `(x, sigma)` to `y`; `sigma` is a precision matrix.
#[pyfunction]
fn dist_sym(name: &str, x: Vec<f64>, sigma: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<f64> {
    let m = manifold(name)?;
    let s = rows_to_matrix(&sigma, m.dim(), "sigma")?;
    let p = SymPoint::new(DVector::from_vec(x), s).map_err(py_err)?;
    subriemannian::dist_sym(&m, &p, &y, &FiberShootingOptions::default()).map_err(py_err)
}

/// Most probable path from `x` (frame given by rows, orthonormal if
/// omitted) to `y`. `method` is `"driving"` or `"onsager"`.
#[pyfunction]
#[pyo3(signature = (name, x, y, frame_rows=None, method="driving", nodes=101))]
fn mpp(
    name: &str,
    x: Vec<f64>,
    y: Vec<f64>,
    frame_rows: Option<Vec<Vec<f64>>>,
    method: &str,
    nodes: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let m = manifold(name)?;
    let path = match method {
        "driving" => {
            let u = frame(&m, &x, frame_rows)?;
            let opts = FiberShootingOptions {
                path_steps: nodes.saturating_sub(1).max(1),
                ..FiberShootingOptions::default()
            };
            subriemannian::mpp_driving(&m, &u, &y, &opts).map_err(py_err)?
        }
        "onsager" => {
            statistics::mpp_isotropic(&m, &x, &y, nodes, &MppOptions::default()).map_err(py_err)?
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown method '{other}'; use 'driving' or 'onsager'"
            )))
        }
    };
    Ok(path_points(&path))
}

/// Endpoints of anisotropic Brownian paths; `None` marks a discarded path.
#[pyfunction]
#[pyo3(signature = (name, x, frame_rows=None, horizon=1.0, steps=100, n_paths=1000, seed=0))]
fn simulate(
    name: &str,
    x: Vec<f64>,
    frame_rows: Option<Vec<Vec<f64>>>,
    horizon: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> PyResult<Vec<Option<Vec<f64>>>> {
    let m = manifold(name)?;
    let u = frame(&m, &x, frame_rows)?;
    let cfg = BrownianConfig::new(m.dim(), horizon, steps, seed, n_paths).map_err(py_err)?;
    let ens = stochastics::simulate_ensemble(&m, &u, &cfg).map_err(py_err)?;
    let n = m.dim();
    Ok(ens
        .states
        .iter()
        .map(|s| s.as_ref().map(|q| q.as_slice()[..n].to_vec()))
        .collect())
}

/// Anisotropic mean and precision of `points`.
#[pyfunction]
#[pyo3(signature = (name, points, max_evals=400))]
fn estimate<'py>(
    py: Python<'py>,
    name: &str,
    points: Vec<Vec<f64>>,
    max_evals: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let m = manifold(name)?;
    let data =
        Dataset::new(&m, points.into_iter().map(DVector::from_vec).collect()).map_err(py_err)?;
    let opts = EstimatorOptions {
        max_evals,
        ..EstimatorOptions::default()
    };
    let r = statistics::anisotropic_estimate(&m, &data, &opts).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("x_hat", r.x_hat.as_slice().to_vec())?;
    d.set_item("sigma_hat", matrix_rows(&r.sigma_hat.sigma))?;
    d.set_item("covariance_hat", matrix_rows(&r.covariance_hat()))?;
    d.set_item("objective", r.objective)?;
    d.set_item("distances", r.distances.clone())?;
    d.set_item("converged", r.converged)?;
    d.set_item("degenerate", r.degenerate)?;
    Ok(d)
}

/// Rank of the iterated brackets of the horizontal fields at a frame.
#[pyfunction]
#[pyo3(signature = (name, x, frame_rows=None, depth=3))]
fn hormander_rank(
    name: &str,
    x: Vec<f64>,
    frame_rows: Option<Vec<Vec<f64>>>,
    depth: usize,
) -> PyResult<usize> {
    let m = manifold(name)?;
    let u = frame(&m, &x, frame_rows)?;
    subriemannian::hormander_rank(&m, &u, depth).map_err(py_err)
}

/// Discrete Onsager-Machlup functional of a path sampled uniformly on `[0, 1]`.
#[pyfunction]
fn onsager_machlup(name: &str, points: Vec<Vec<f64>>) -> PyResult<f64> {
    let m = manifold(name)?;
    let steps = points.len().saturating_sub(1).max(1);
    let path = SampledPath::new(
        SampledPath::uniform_times(1.0, steps)[..points.len()].to_vec(),
        points.into_iter().map(DVector::from_vec).collect(),
    )
    .map_err(py_err)?;
    statistics::onsager_machlup(&m, &path).map_err(py_err)
}

#[pymodule]
fn framestat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(manifolds, m)?)?;
    m.add_function(wrap_pyfunction!(dist_sym, m)?)?;
    m.add_function(wrap_pyfunction!(mpp, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(hormander_rank, m)?)?;
    m.add_function(wrap_pyfunction!(onsager_machlup, m)?)?;
    Ok(())
}
