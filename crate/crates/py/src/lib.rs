//! Python bindings: cohorts, the GATE encoder, pretraining, cross-validation
//! and the numeric helpers. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use gate_core::eval::{self, FoldPlan, Method};
use gate_core::io::{read_manifest, write_manifest, Checkpoint};
use gate_core::model::{self, GateModel};
use gate_core::rng::stream;
use gate_core::signal::{cohort_rois, upper_len, window_features, BoldRecording, WindowSpec};
use gate_core::synth::{generate_cohort, SynthConfig};
use gate_core::trainer::{self, TrainConfig};
use gate_core::GateError;
use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: GateError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let nrows = rows.len();
    Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(name = "TrainConfig", from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    #[pyo3(get, set)]
    ssl_epochs: usize,
    #[pyo3(get, set)]
    ft_epochs: usize,
    #[pyo3(get, set)]
    lr: f64,
    #[pyo3(get, set)]
    weight_decay: f64,
    #[pyo3(get, set)]
    gamma: f64,
    #[pyo3(get, set)]
    hidden_dim: usize,
    #[pyo3(get, set)]
    label_rate: f64,
}

impl PyTrainConfig {
    fn to_core(&self) -> PyResult<TrainConfig> {
        let cfg = TrainConfig {
            ssl_epochs: self.ssl_epochs,
            ft_epochs: self.ft_epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            gamma: self.gamma,
            hidden_dim: self.hidden_dim,
            label_rate: self.label_rate,
            ..TrainConfig::default()
        };
        cfg.validate().map_err(py_err)?;
        Ok(cfg)
    }
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (ssl_epochs=100, ft_epochs=100, lr=1e-3, weight_decay=1e-5, gamma=0.2, hidden_dim=256, label_rate=0.2))]
    fn new(
        ssl_epochs: usize,
        ft_epochs: usize,
        lr: f64,
        weight_decay: f64,
        gamma: f64,
        hidden_dim: usize,
        label_rate: f64,
    ) -> PyResult<Self> {
        let cfg = Self {
            ssl_epochs,
            ft_epochs,
            lr,
            weight_decay,
            gamma,
            hidden_dim,
            label_rate,
        };
        cfg.to_core()?;
        Ok(cfg)
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainConfig(ssl_epochs={}, ft_epochs={}, lr={}, weight_decay={}, gamma={}, hidden_dim={}, label_rate={})",
            self.ssl_epochs, self.ft_epochs, self.lr, self.weight_decay, self.gamma, self.hidden_dim, self.label_rate
        )
    }
}

#[pyclass(name = "Cohort")]
struct PyCohort {
    recordings: Vec<BoldRecording>,
}

#[pymethods]
impl PyCohort {
    #[staticmethod]
    #[pyo3(signature = (n_subjects=200, n_rois=16, n_timepoints=240, class_gap=0.6, spurious_strength=0.5, noise_std=0.3, seed=0))]
    fn synthetic(
        n_subjects: usize,
        n_rois: usize,
        n_timepoints: usize,
        class_gap: f64,
        spurious_strength: f64,
        noise_std: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = SynthConfig {
            n_subjects,
            n_rois,
            n_timepoints,
            class_gap,
            spurious_strength,
            noise_std,
            seed,
            ..SynthConfig::default()
        };
        Ok(Self {
            recordings: generate_cohort(&cfg).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_manifest(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            recordings: read_manifest(&path).map_err(py_err)?,
        })
    }

    /// Returns the manifest path.
    fn write_manifest(&self, dir: PathBuf) -> PyResult<PathBuf> {
        write_manifest(&dir, &self.recordings, None, None).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.recordings.len()
    }

    #[getter]
    fn labels(&self) -> Vec<Option<usize>> {
        self.recordings.iter().map(|r| r.meta.label).collect()
    }

    #[getter]
    fn subject_ids(&self) -> Vec<String> {
        self.recordings.iter().map(|r| r.subject_id.clone()).collect()
    }

    /// ROI x time signal of subject `i`.
    fn signal(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        let rec = self
            .recordings
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("subject {i} out of range")))?;
        Ok(to_rows(rec.signal()))
    }

    /// Flattened upper-triangle FC of one window for every subject.
    fn window_features(&self, start: usize, length: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&window_features(&self.recordings, start, length).map_err(py_err)?.rows))
    }
}

#[pyclass(name = "GateModel")]
struct PyGateModel {
    inner: GateModel,
}

#[pymethods]
impl PyGateModel {
    #[new]
    #[pyo3(signature = (input_dim, hidden_dim, seed=0))]
    fn new(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        Self {
            inner: GateModel::new(input_dim, hidden_dim, &mut stream(seed, "init", &[])),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path, None).map_err(py_err)?;
        Ok(Self {
            inner: ckpt.to_model().map_err(py_err)?,
        })
    }

    #[pyo3(signature = (path, config_hash="", seed=0))]
    fn save(&self, path: PathBuf, config_hash: &str, seed: u64) -> PyResult<()> {
        Checkpoint::from_model(&self.inner, config_hash, seed, "python").save(&path).map_err(py_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.inner.hidden_dim()
    }

    /// Column-standardized embedding; without an adjacency the graph is I.
    #[pyo3(signature = (features, adjacency=None))]
    fn embed(&self, features: Vec<Vec<f64>>, adjacency: Option<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        let x = to_array(features)?;
        let a = adjacency.map(to_array).transpose()?;
        Ok(to_rows(&model::encode(&self.inner, &x, a.as_ref()).map_err(py_err)?))
    }

    /// Class probabilities per subject, averaged over sliding windows.
    #[pyo3(signature = (cohort, window_length=30, window_step=15))]
    fn predict_proba(&self, cohort: &PyCohort, window_length: usize, window_step: usize) -> PyResult<Vec<(f64, f64)>> {
        let w = WindowSpec::new(window_length, window_step).map_err(py_err)?;
        let probs = trainer::predict(&self.inner, &cohort.recordings, w).map_err(py_err)?;
        Ok(probs.into_iter().map(|p| (p[0], p[1])).collect())
    }
}

/// Self-supervised pretraining on the whole cohort; returns the encoder and
/// the per-epoch loss.
#[pyfunction]
#[pyo3(signature = (cohort, config, seed=0))]
fn pretrain(cohort: &PyCohort, config: &PyTrainConfig, seed: u64) -> PyResult<(PyGateModel, Vec<f64>)> {
    let cfg = config.to_core()?;
    let d = upper_len(cohort_rois(&cohort.recordings).map_err(py_err)?);
    let init = GateModel::new(d, cfg.hidden_dim, &mut stream(seed, "init", &[]));
    let (model, trace) =
        trainer::ssl_pretrain(&cohort.recordings, init, &cfg, stream(seed, "augment", &[]), None).map_err(py_err)?;
    Ok((PyGateModel { inner: model }, trace.ssl_loss))
}

/// Repeated stratified cross-validation at each label rate. One dict per
/// (rate, method) with metric means and standard deviations.
#[pyfunction]
#[pyo3(signature = (cohort, config, rates, methods=vec!["gate".to_string(), "vanilla_gcn".to_string()], folds=5, repeats=5, seed=0))]
fn cross_validate<'py>(
    py: Python<'py>,
    cohort: &PyCohort,
    config: &PyTrainConfig,
    rates: Vec<f64>,
    methods: Vec<String>,
    folds: usize,
    repeats: usize,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.to_core()?;
    let methods = methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let labels = cohort
        .recordings
        .iter()
        .map(|r| r.meta.label.ok_or_else(|| PyValueError::new_err(format!("subject `{}` has no label", r.subject_id))))
        .collect::<PyResult<Vec<_>>>()?;
    let plan = FoldPlan::stratified(&labels, folds, repeats, seed).map_err(py_err)?;
    let entries = eval::label_rate_sweep(&cohort.recordings, &rates, &methods, &plan, &cfg).map_err(py_err)?;
    entries
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("method", e.method.name())?;
            d.set_item("rate", e.rate)?;
            for name in ["accuracy", "auc", "precision", "recall", "f1"] {
                let s = e.report.summary(name).expect("known metric");
                d.set_item(name, s.mean)?;
                d.set_item(format!("{name}_std"), s.std)?;
            }
            d.set_item("n", e.folds.len())?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn pearson_fc(signal: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let s = to_array(signal)?;
    Ok(to_rows(&gate_core::signal::pearson_fc(s.view()).map_err(py_err)?.values))
}

#[pyfunction]
fn cca_ssl_loss(za: Vec<Vec<f64>>, zb: Vec<Vec<f64>>, gamma: f64) -> PyResult<f64> {
    model::cca_ssl_loss(&to_array(za)?, &to_array(zb)?, gamma).map_err(py_err)
}

/// Descending singular values.
#[pyfunction]
fn singular_values(z: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    eval::singular_value_profile(&to_array(z)?).map_err(py_err)
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<usize>) -> PyResult<f64> {
    eval::roc_auc(&scores, &labels).map_err(py_err)
}

/// Welch two-sample t-test: (t, df, two-sided p).
#[pyfunction]
fn welch_ttest(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let t = eval::two_sample_ttest(&a, &b).map_err(py_err)?;
    Ok((t.t, t.df, t.p))
}

#[pymodule]
fn gate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyCohort>()?;
    m.add_class::<PyGateModel>()?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_fc, m)?)?;
    m.add_function(wrap_pyfunction!(cca_ssl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(welch_ttest, m)?)?;
    Ok(())
}
