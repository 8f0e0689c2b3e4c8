//! Python bindings. Matrices cross the boundary as lists of rows.

use cadre::data::{fit_scaler, gen_synthetic};
use cadre::eval::{self, density_rate, tau_statistic, DENSITY_THRESHOLD};
use cadre::model::{assign, membership, predict};
use cadre::optim::train;
use cadre::{CadreError, Dataset, Hyperparams, ModelFile, TrainConfig};
use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: CadreError) -> PyErr {
    match e {
        CadreError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((rows.len(), p), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn dataset(x: &[Vec<f64>], y: &[f64], names: Option<Vec<String>>) -> PyResult<Dataset> {
    let features = matrix(x)?;
    let names = names.unwrap_or_else(|| (0..features.ncols()).map(|j| format!("x{j}")).collect());
    Dataset::new(features, Array1::from(y.to_vec()), names, "y").map_err(to_py)
}

/// A trained cadre model together with the scaling fitted on its training data.
#[pyclass(name = "Model", module = "cadre")]
struct PyModel {
    inner: ModelFile,
}

impl PyModel {
    fn standardized_rows(&self, x: &[Vec<f64>]) -> PyResult<Vec<Vec<f64>>> {
        let p = self.inner.feature_names.len();
        x.iter()
            .map(|row| {
                if row.len() != p {
                    return Err(PyValueError::new_err(format!("expected {p} features, got {}", row.len())));
                }
                Ok(self.inner.scaler.transform_row(row))
            })
            .collect()
    }
}

#[pymethods]
impl PyModel {
    /// Predictions on the original target scale.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let params = self.inner.cadre_params().map_err(to_py)?;
        let gamma = self.inner.hyperparams.gamma;
        Ok(self
            .standardized_rows(&x)?
            .iter()
            .map(|z| self.inner.scaler.inverse_target(predict(z, &params, gamma)))
            .collect())
    }

    /// Cadre membership probabilities, one list per row.
    fn membership(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let params = self.inner.cadre_params().map_err(to_py)?;
        let gamma = self.inner.hyperparams.gamma;
        Ok(self.standardized_rows(&x)?.iter().map(|z| membership(z, &params, gamma)).collect())
    }

    /// Most probable cadre (0-based) per row.
    fn assign(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let params = self.inner.cadre_params().map_err(to_py)?;
        let gamma = self.inner.hyperparams.gamma;
        Ok(self.standardized_rows(&x)?.iter().map(|z| assign(z, &params, gamma)).collect())
    }

    #[getter]
    fn n_cadres(&self) -> usize {
        self.inner.hyperparams.n_cadres
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    #[getter]
    fn d(&self) -> Vec<f64> {
        self.inner.params.d.clone()
    }

    /// Regression weights, `P x M`.
    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        self.inner.params.weights.clone()
    }

    #[getter]
    fn intercepts(&self) -> Vec<f64> {
        self.inner.params.intercepts.clone()
    }

    #[getter]
    fn final_loss(&self) -> f64 {
        self.inner.provenance.final_loss
    }

    fn density_rate(&self) -> PyResult<f64> {
        Ok(density_rate(&self.inner.cadre_params().map_err(to_py)?, DENSITY_THRESHOLD))
    }

    fn tau(&self) -> PyResult<f64> {
        Ok(tau_statistic(&self.inner.cadre_params().map_err(to_py)?))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        ModelFile::from_json(s).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ModelFile::load(path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n_cadres={}, gamma={}, features={:?})",
            self.inner.hyperparams.n_cadres, self.inner.hyperparams.gamma, self.inner.feature_names
        )
    }
}

fn config(seed: u64, epochs: usize, batch_size: usize, patience: usize, lr: f64, restarts: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        max_epochs: epochs,
        batch_size,
        patience,
        restarts,
        ..TrainConfig::default()
    };
    cfg.adam.lr = lr;
    cfg
}

/// Standardizes `x` and `y`, trains a cadre model, and returns it.
#[pyfunction]
#[pyo3(name = "train", signature = (
    x, y, cadres=3, gamma=1.0, lambda_d=0.01, lambda_w=0.01, alpha_d=0.95, alpha_w=0.05,
    seed=0, epochs=2000, batch_size=64, patience=10, lr=0.01, restarts=1, feature_names=None
))]
#[allow(clippy::too_many_arguments)]
fn py_train(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    cadres: usize,
    gamma: f64,
    lambda_d: f64,
    lambda_w: f64,
    alpha_d: f64,
    alpha_w: f64,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    patience: usize,
    lr: f64,
    restarts: usize,
    feature_names: Option<Vec<String>>,
) -> PyResult<PyModel> {
    let raw = dataset(&x, &y, feature_names)?;
    let scaler = fit_scaler(&raw).map_err(to_py)?;
    let ds = scaler.transform(&raw).map_err(to_py)?;
    let hp = Hyperparams {
        gamma,
        lambda_d,
        lambda_w,
        alpha_d,
        alpha_w,
        n_cadres: cadres,
    };
    let model = train(&ds, &hp, &config(seed, epochs, batch_size, patience, lr, restarts)).map_err(to_py)?;
    let inner = ModelFile::new(&model, scaler, raw.feature_names().to_vec(), "y").map_err(to_py)?;
    Ok(PyModel { inner })
}

/// Bootstrap cadre stability of `x`, `y` after standardization. Returns
/// `(per_cadre_abm, model_abm)`; empty reference cadres map to `None`.
#[pyfunction]
#[pyo3(signature = (x, y, b=10, cadres=3, gamma=1.0, lambda_d=0.01, lambda_w=0.01, seed=0, epochs=2000, restarts=1))]
#[allow(clippy::too_many_arguments)]
fn bootstrap_quality(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    b: usize,
    cadres: usize,
    gamma: f64,
    lambda_d: f64,
    lambda_w: f64,
    seed: u64,
    epochs: usize,
    restarts: usize,
) -> PyResult<(Vec<Option<f64>>, f64)> {
    let raw = dataset(&x, &y, None)?;
    let ds = fit_scaler(&raw).and_then(|s| s.transform(&raw)).map_err(to_py)?;
    let hp = Hyperparams {
        gamma,
        lambda_d,
        lambda_w,
        n_cadres: cadres,
        ..Hyperparams::default()
    };
    let cfg = config(seed, epochs, 64, 10, 0.01, restarts);
    let report = eval::bootstrap_quality(&ds, &hp, &cfg, b, seed).map_err(to_py)?;
    Ok((report.per_cadre_abm, report.model_abm))
}

/// Three-group synthetic data: `(x, y, labels)`.
#[pyfunction]
#[pyo3(name = "gen_synthetic", signature = (n_per_group=100, seed=0))]
fn py_gen_synthetic(n_per_group: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<usize>)> {
    let (ds, labels) = gen_synthetic(n_per_group, seed).map_err(to_py)?;
    let x = ds.features().rows().into_iter().map(|r| r.to_vec()).collect();
    Ok((x, ds.target().to_vec(), labels))
}

#[pyfunction]
fn mse(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    eval::mse(&pred, &truth).map_err(to_py)
}

#[pyfunction]
fn match_score(a: Vec<usize>, b: Vec<usize>) -> f64 {
    eval::match_score(&a, &b)
}

#[pyfunction]
fn matched_accuracy(pred: Vec<usize>, truth: Vec<usize>, n_labels: usize) -> PyResult<f64> {
    eval::matched_accuracy(&pred, &truth, n_labels).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "cadre")]
fn cadre_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(py_train, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_quality, m)?)?;
    m.add_function(wrap_pyfunction!(py_gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(match_score, m)?)?;
    m.add_function(wrap_pyfunction!(matched_accuracy, m)?)?;
    Ok(())
}
