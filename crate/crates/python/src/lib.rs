//! Python module `paramcrop`: crop parameter mapping, grid sampling, the
//! contrastive loss, disparity metrics, training runs and the gradient check.
//!
//! Videos cross the boundary as a flat list of floats plus a
//! `(C, T, H, W)` shape tuple.

use paramcrop_core::affine::{self, UnitParams, NUM_PARAMS};
use paramcrop_core::contrastive::{self, EmbeddingBatch, LossConfig};
use paramcrop_core::gradcheck;
use paramcrop_core::sampler::{self, VideoTensor};
use paramcrop_core::simulator::{self, TrainConfig};
use paramcrop_core::tensor::DenseArray;
use paramcrop_core::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Dimension(_) | Error::Contract(_) | Error::UnsupportedMetric(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io(_) | Error::Format(_) => PyOSError::new_err(e.to_string()),
        Error::NonFinite(_) | Error::Training { .. } => PyRuntimeError::new_err(e.to_string()),
    }
}

fn six(v: &[f64], what: &str) -> PyResult<[f64; NUM_PARAMS]> {
    v.try_into()
        .map_err(|_| PyValueError::new_err(format!("{what} needs {NUM_PARAMS} values, got {}", v.len())))
}

#[pyclass(name = "AffineParams", module = "paramcrop", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyAffineParams {
    inner: affine::AffineParams,
}

#[pymethods]
impl PyAffineParams {
    #[new]
    #[pyo3(signature = (s_p = 1.0, s_t = 1.0, theta = 0.0, dx = 0.0, dy = 0.0, dt = 0.0))]
    fn new(s_p: f64, s_t: f64, theta: f64, dx: f64, dy: f64, dt: f64) -> PyResult<Self> {
        let inner = affine::AffineParams { s_p, s_t, theta, dx, dy, dt };
        inner.validate().map_err(py_err)?;
        Ok(PyAffineParams { inner })
    }

    #[getter]
    fn s_p(&self) -> f64 {
        self.inner.s_p
    }
    #[getter]
    fn s_t(&self) -> f64 {
        self.inner.s_t
    }
    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }
    #[getter]
    fn dx(&self) -> f64 {
        self.inner.dx
    }
    #[getter]
    fn dy(&self) -> f64 {
        self.inner.dy
    }
    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    /// `[s_p, s_t, theta, dx, dy, dt]`.
    fn to_list(&self) -> Vec<f64> {
        self.inner.to_array().to_vec()
    }

    /// The 3×4 affine matrix as nested lists.
    fn matrix(&self) -> Vec<Vec<f64>> {
        affine::build_affine_matrix(&self.inner).0.iter().map(|r| r.to_vec()).collect()
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "AffineParams(s_p={}, s_t={}, theta={}, dx={}, dy={}, dt={})",
            p.s_p, p.s_t, p.theta, p.dx, p.dy, p.dt
        )
    }
}

#[pyclass(name = "ParamBounds", module = "paramcrop", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyParamBounds {
    inner: affine::ParamBounds,
}

#[pymethods]
impl PyParamBounds {
    #[new]
    #[pyo3(signature = (sp_min = 0.5, sp_max = 1.0, st_min = 0.5, st_max = 1.0, theta_min = 0.0, theta_max = 0.0, detach_bound = 0.2))]
    fn new(sp_min: f64, sp_max: f64, st_min: f64, st_max: f64, theta_min: f64, theta_max: f64, detach_bound: f64) -> PyResult<Self> {
        let inner = affine::ParamBounds {
            spatial_scale: affine::Interval::new(sp_min, sp_max),
            temporal_scale: affine::Interval::new(st_min, st_max),
            rotation: affine::Interval::new(theta_min, theta_max),
            detach_bound,
        };
        inner.validate().map_err(py_err)?;
        Ok(PyParamBounds { inner })
    }

    #[getter]
    fn detach_bound(&self) -> f64 {
        self.inner.detach_bound
    }
}

fn bounds_or_default(b: Option<PyParamBounds>) -> affine::ParamBounds {
    b.map(|b| b.inner).unwrap_or_default()
}

/// Maps six unit values onto crop parameters.
#[pyfunction]
#[pyo3(signature = (v, bounds = None))]
fn clamp_params(v: Vec<f64>, bounds: Option<PyParamBounds>) -> PyResult<PyAffineParams> {
    let u = UnitParams::new(six(&v, "v")?).map_err(py_err)?;
    Ok(PyAffineParams {
        inner: affine::clamp_params(&u, &bounds_or_default(bounds)),
    })
}

/// Returns the gradient mask: `True` where gradient still flows.
#[pyfunction]
fn early_stop_mask(v: Vec<f64>, detach_bound: f64) -> PyResult<Vec<bool>> {
    let u = UnitParams::new(six(&v, "v")?).map_err(py_err)?;
    let (_, mask) = affine::apply_early_stop(&u, detach_bound).map_err(py_err)?;
    Ok(mask.0.to_vec())
}

/// Align-corners base grid as `[x, y, t]` triples, `t` outermost.
#[pyfunction]
fn generate_grid(t: usize, h: usize, w: usize) -> PyResult<Vec<[f64; 3]>> {
    Ok(affine::generate_grid(t, h, w).map_err(py_err)?.coords().to_vec())
}

/// Samples a `crop_shape = (T, H, W)` crop of `video` at `params`.
#[pyfunction]
fn crop_video(
    video: Vec<f64>,
    shape: [usize; 4],
    params: PyAffineParams,
    crop_shape: [usize; 3],
) -> PyResult<(Vec<f64>, [usize; 4])> {
    let v = VideoTensor::from_vec(shape, video).map_err(py_err)?;
    let grid = affine::generate_grid(crop_shape[0], crop_shape[1], crop_shape[2]).map_err(py_err)?;
    let grid = affine::transform_grid(&grid, &affine::build_affine_matrix(&params.inner));
    let out = sampler::sample(&v, &grid).map_err(py_err)?;
    Ok((out.data().to_vec(), out.shape()))
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DenseArray> {
    DenseArray::from_rows(rows).map_err(py_err)
}

/// NT-Xent of `2N` unit-length rows; rows `2k`, `2k + 1` are positives.
#[pyfunction]
#[pyo3(signature = (rows, temperature = contrastive::DEFAULT_TEMPERATURE))]
fn nt_xent(rows: Vec<Vec<f64>>, temperature: f64) -> PyResult<f64> {
    let e = EmbeddingBatch::new(matrix(&rows)?).map_err(py_err)?;
    let cfg = LossConfig::new(temperature, rows.len() / 2).map_err(py_err)?;
    contrastive::nt_xent(&e, &cfg).map_err(py_err)
}

/// Loss and gradient for raw rows, normalized internally.
#[pyfunction]
#[pyo3(signature = (rows, temperature = contrastive::DEFAULT_TEMPERATURE))]
fn nt_xent_raw(rows: Vec<Vec<f64>>, temperature: f64) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let raw = matrix(&rows)?;
    let cfg = LossConfig::new(temperature, rows.len() / 2).map_err(py_err)?;
    let (loss, g) = contrastive::nt_xent_raw(&raw, &cfg).map_err(py_err)?;
    let grad = (0..g.shape()[0]).map(|i| g.row(i).to_vec()).collect();
    Ok((loss, grad))
}

fn cube(p: &PyAffineParams) -> PyResult<simulator::CropCube> {
    simulator::crop_cube_from_params(&p.inner).map_err(py_err)
}

#[pyfunction]
fn st_iou(a: PyAffineParams, b: PyAffineParams) -> PyResult<f64> {
    Ok(simulator::st_iou(&cube(&a)?, &cube(&b)?))
}

/// `(raw, normalized)` Manhattan distance between crop centers.
#[pyfunction]
fn center_manhattan(a: PyAffineParams, b: PyAffineParams) -> PyResult<(f64, f64)> {
    Ok(simulator::center_manhattan(&cube(&a)?, &cube(&b)?))
}

/// Every config key with its default, as config-file text.
#[pyfunction]
fn default_config() -> String {
    TrainConfig::default().to_text()
}

/// Runs training on `key = value` config text; returns the metrics CSV.
#[pyfunction]
#[pyo3(signature = (config = ""))]
fn train(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = TrainConfig::parse(config).map_err(py_err)?;
    let log = py.detach(|| simulator::run_training(&cfg)).map_err(py_err)?;
    Ok(log.to_csv())
}

/// Returns `(passed, report text)`.
#[pyfunction]
#[pyo3(signature = (seed = 0, seeds = gradcheck::DEFAULT_SEEDS, tolerance = gradcheck::DEFAULT_TOLERANCE))]
fn run_gradcheck(py: Python<'_>, seed: u64, seeds: usize, tolerance: f64) -> PyResult<(bool, String)> {
    let report = py.detach(|| gradcheck::run_gradcheck(seed, seeds, tolerance)).map_err(py_err)?;
    Ok((report.passed(), report.to_string()))
}

#[pymodule]
fn paramcrop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAffineParams>()?;
    m.add_class::<PyParamBounds>()?;
    m.add_function(wrap_pyfunction!(clamp_params, m)?)?;
    m.add_function(wrap_pyfunction!(early_stop_mask, m)?)?;
    m.add_function(wrap_pyfunction!(generate_grid, m)?)?;
    m.add_function(wrap_pyfunction!(crop_video, m)?)?;
    m.add_function(wrap_pyfunction!(nt_xent, m)?)?;
    m.add_function(wrap_pyfunction!(nt_xent_raw, m)?)?;
    m.add_function(wrap_pyfunction!(st_iou, m)?)?;
    m.add_function(wrap_pyfunction!(center_manhattan, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_gradcheck, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
