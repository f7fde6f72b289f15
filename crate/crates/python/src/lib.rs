//! Python bindings: fit a model, query its posterior, persist draw files.

use std::path::PathBuf;

use mbart::data_io::{load_draws, parse_monotone_spec, persist_draws};
use mbart::error::Error;
use mbart::inference::{self, predict_with_level, DEFAULT_LEVEL};
use mbart::priors;
use mbart::sampler::sigma_hat;
use mbart::{ChainConfig, Dataset, DrawSet, HyperParams, Mode, Monotone};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } | Error::DrawFile(_) => PyIOError::new_err(err.to_string()),
        Error::Invariant(_) | Error::Infeasible { .. } | Error::Structure(_) => PyRuntimeError::new_err(err.to_string()),
        Error::Input(_) | Error::Data(_) | Error::Dimension { .. } => PyValueError::new_err(err.to_string()),
    }
}

/// Posterior draws of a fitted model.
#[pyclass(name = "Model", module = "mbart_py", frozen)]
pub struct PyModel {
    set: DrawSet,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn mode(&self) -> String {
        self.set.meta.mode.to_string()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.set.meta.names.clone()
    }

    #[getter]
    fn n_draws(&self) -> usize {
        self.set.len()
    }

    /// `(mean, lo, hi)` per row of `x`, on the original response scale.
    #[pyo3(signature = (x, level = DEFAULT_LEVEL))]
    fn predict(&self, x: Vec<Vec<f64>>, level: f64) -> PyResult<Vec<(f64, f64, f64)>> {
        let preds = predict_with_level(&self.set, &x, level).map_err(to_py)?;
        Ok(preds.iter().map(|p| (p.mean, p.lo, p.hi)).collect())
    }

    /// One row per draw, one column per row of `x`.
    fn f_draws(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.set.f_draws(&x).map_err(to_py)
    }

    fn sigma_draws(&self) -> Vec<f64> {
        self.set.sigma_draws()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        persist_draws(&self.set, &path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_draws(&path).map(|set| PyModel { set }).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.set.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(mode={}, draws={}, predictors={:?})",
            self.set.meta.mode,
            self.set.len(),
            self.set.meta.names
        )
    }
}

/// Fits BART or mBART. `monotone` uses the command-line syntax, e.g.
/// `"x1:inc,x3:dec"`; unset prior values take the mode's defaults.
#[pyfunction]
#[pyo3(signature = (
    x, y, names = None, monotone = "", mode = "bart", m = 200, burn = 500, draws = 1000,
    thin = 1, seed = 0, k = None, alpha = None, beta = None, max_cuts = 100
))]
#[allow(clippy::too_many_arguments)]
pub fn fit(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    names: Option<Vec<String>>,
    monotone: &str,
    mode: &str,
    m: usize,
    burn: usize,
    draws: usize,
    thin: usize,
    seed: u64,
    k: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    max_cuts: usize,
) -> PyResult<PyModel> {
    let mode: Mode = mode.parse().map_err(to_py)?;
    let p = x.first().map_or(0, Vec::len);
    let names = names.unwrap_or_else(|| (1..=p).map(|v| format!("x{v}")).collect());
    let mut dirs = vec![Monotone::None; names.len()];
    for (col, dir) in parse_monotone_spec(monotone).map_err(to_py)? {
        let v = names
            .iter()
            .position(|n| *n == col)
            .ok_or_else(|| PyValueError::new_err(format!("unknown column `{col}` in monotone spec")))?;
        dirs[v] = dir;
    }
    let data = Dataset::from_raw(x, y, names, "y", dirs).map_err(to_py)?;
    let mut hp = HyperParams::for_mode(mode, m, data.constraint_set());
    if let Some(k) = k {
        hp.k = k;
    }
    if let Some(a) = alpha {
        hp.alpha = a;
    }
    if let Some(b) = beta {
        hp.beta = b;
    }
    hp.calibrate(sigma_hat(&data.x, &data.y)).map_err(to_py)?;
    hp.validate().map_err(to_py)?;
    let config = ChainConfig {
        n_burn: burn,
        n_draw: draws,
        thin,
        seed,
        ..ChainConfig::default()
    };
    // the chain holds no Python objects
    let (set, _) = py
        .detach(|| inference::fit(&data, &hp, mode, &config, max_cuts))
        .map_err(to_py)?;
    Ok(PyModel { set })
}

/// λ of the scaled inverse chi-square σ prior.
#[pyfunction]
pub fn calibrate_sigma_prior(sigma_hat: f64, nu: f64, q: f64) -> PyResult<f64> {
    priors::calibrate_sigma_prior(sigma_hat, nu, q).map_err(to_py)
}

/// (mean, sd) of a leaf-mean prior on the rescaled response.
#[pyfunction]
pub fn calibrate_mu_prior(k: f64, m: usize) -> (f64, f64) {
    priors::calibrate_mu_prior(k, m)
}

#[pyfunction]
pub fn rmse(f_hat: Vec<f64>, f_true: Vec<f64>) -> PyResult<f64> {
    inference::rmse(&f_hat, &f_true).map_err(to_py)
}

pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_sigma_prior, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_mu_prior, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add("DEFAULT_LEVEL", DEFAULT_LEVEL)?;
    Ok(())
}

#[pymodule]
fn mbart_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
