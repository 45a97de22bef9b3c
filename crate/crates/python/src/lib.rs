//! Python bindings: `import tadloc`.
//!
//! Feature sequences, models and records are wrapped as classes; structured
//! results (proposals, reports, training logs) come back as plain dicts.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

use tadloc::gradcheck::{run as run_gradcheck, GradcheckOptions};
use tadloc::model::{forward, init_params, load_checkpoint, save_checkpoint};
use tadloc::proposals::{compute_tcam, proposals_from_trace, DEFAULT_THRESHOLD};
use tadloc::{
    losses, metrics, trainer, Error, FeatureSequence, LossWeights, ModelConfig, ModelParams,
    ScoreSource, ScoredSet, SynthConfig, TrainConfig, VideoRecord,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Converts any serializable value to native Python objects via JSON.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A `T x D` per-segment feature sequence.
#[pyclass(name = "Features", module = "tadloc", from_py_object)]
#[derive(Clone)]
struct PyFeatures(FeatureSequence);

#[pymethods]
impl PyFeatures {
    #[new]
    fn new(id: String, rows: Vec<Vec<f32>>) -> PyResult<Self> {
        FeatureSequence::from_rows(id, &rows)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    /// `(T, D)`.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.len(), self.0.dim())
    }

    fn rows(&self) -> Vec<Vec<f32>> {
        self.0.rows().map(<[f32]>::to_vec).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Features(id={:?}, T={}, D={})",
            self.0.id,
            self.0.len(),
            self.0.dim()
        )
    }
}

/// One manifest entry.
#[pyclass(name = "VideoRecord", module = "tadloc", from_py_object)]
#[derive(Clone)]
struct PyRecord(VideoRecord);

#[pymethods]
impl PyRecord {
    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn feature_path(&self) -> String {
        self.0.feature_path.clone()
    }

    #[getter]
    fn label(&self) -> u8 {
        self.0.label
    }

    #[getter]
    fn segment_labels(&self) -> Option<Vec<u8>> {
        self.0.segment_labels.clone()
    }

    #[getter]
    fn frames_per_segment(&self) -> u32 {
        self.0.frames_per_segment
    }

    fn __repr__(&self) -> String {
        format!("VideoRecord(id={:?}, label={})", self.0.id, self.0.label)
    }
}

/// Trained or freshly initialized model parameters.
#[pyclass(name = "Model", module = "tadloc", from_py_object)]
#[derive(Clone)]
struct PyModel(ModelParams);

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (input_dim, seed=0, conv_kernel=3, conv_channels=None, attn_hidden=64, clf_hidden=32))]
    fn new(
        input_dim: usize,
        seed: u64,
        conv_kernel: usize,
        conv_channels: Option<usize>,
        attn_hidden: usize,
        clf_hidden: usize,
    ) -> PyResult<Self> {
        let cfg = ModelConfig {
            input_dim,
            conv_kernel,
            conv_channels: conv_channels.unwrap_or(input_dim),
            attn_hidden,
            clf_hidden,
            seed,
        };
        init_params(&cfg).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_checkpoint(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.0, path).map_err(py_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.0.config.input_dim
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.0.num_params()
    }

    /// Returns `(lambda, prob)`.
    fn forward(&self, features: &PyFeatures) -> PyResult<(Vec<f64>, f64)> {
        let trace = forward(&self.0, &features.0).map_err(py_err)?;
        Ok((trace.lambda().to_vec(), trace.prob()))
    }

    /// Per-segment `lambda`, `tcam` and `wtcam` lists.
    fn scores<'py>(&self, py: Python<'py>, features: &PyFeatures) -> PyResult<Bound<'py, PyAny>> {
        let trace = compute_tcam(&self.0, &features.0).map_err(py_err)?;
        to_py(py, &trace)
    }

    #[pyo3(signature = (features, thr=DEFAULT_THRESHOLD, frames_per_segment=16))]
    fn proposals<'py>(
        &self,
        py: Python<'py>,
        features: &PyFeatures,
        thr: f64,
        frames_per_segment: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let trace = compute_tcam(&self.0, &features.0).map_err(py_err)?;
        let props = proposals_from_trace(&trace, thr, frames_per_segment).map_err(py_err)?;
        to_py(py, &props)
    }

    fn __repr__(&self) -> String {
        let c = &self.0.config;
        format!(
            "Model(input_dim={}, conv_kernel={}, conv_channels={}, attn_hidden={}, clf_hidden={})",
            c.input_dim, c.conv_kernel, c.conv_channels, c.attn_hidden, c.clf_hidden
        )
    }
}

#[pyfunction]
fn read_features(path: &str) -> PyResult<PyFeatures> {
    tadloc::read_features(path).map(PyFeatures).map_err(py_err)
}

#[pyfunction]
fn write_features(features: &PyFeatures, path: &str) -> PyResult<()> {
    tadloc::write_features(&features.0, path).map_err(py_err)
}

#[pyfunction]
fn load_manifest(path: &str) -> PyResult<Vec<PyRecord>> {
    let records = tadloc::load_manifest(path).map_err(py_err)?;
    Ok(records.into_iter().map(PyRecord).collect())
}

#[pyfunction]
fn load_dataset(records: Vec<PyRecord>) -> PyResult<Vec<PyFeatures>> {
    let records: Vec<VideoRecord> = records.into_iter().map(|r| r.0).collect();
    let seqs = tadloc::datastore::load_dataset(&records).map_err(py_err)?;
    Ok(seqs.into_iter().map(PyFeatures).collect())
}

/// Returns `(features, records)`.
#[pyfunction]
#[pyo3(signature = (num_videos=40, t_range=(20, 40), dim=16, anomaly_fraction=0.5,
                    anomaly_window=(4, 8), noise=0.5, shift=3.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    num_videos: usize,
    t_range: (usize, usize),
    dim: usize,
    anomaly_fraction: f64,
    anomaly_window: (usize, usize),
    noise: f64,
    shift: f64,
    seed: u64,
) -> PyResult<(Vec<PyFeatures>, Vec<PyRecord>)> {
    let cfg = SynthConfig {
        num_videos,
        t_range,
        dim,
        anomaly_fraction,
        anomaly_window_range: anomaly_window,
        noise_scale: noise,
        anomaly_shift: shift,
        seed,
    };
    let (seqs, records) = tadloc::generate_synthetic(&cfg).map_err(py_err)?;
    Ok((
        seqs.into_iter().map(PyFeatures).collect(),
        records.into_iter().map(PyRecord).collect(),
    ))
}

/// Trains from scratch; returns `(model, log)` where `log` has one dict per epoch.
#[pyfunction]
#[pyo3(signature = (features, labels, lr1=1e-4, epochs1=10, lr2=1e-5, epochs2=40, batch=8,
                    alpha=2e-8, beta=0.002, gamma=0.5, block_len=3, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    features: Vec<PyFeatures>,
    labels: Vec<u8>,
    lr1: f64,
    epochs1: usize,
    lr2: f64,
    epochs2: usize,
    batch: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
    block_len: usize,
    seed: u64,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let seqs: Vec<FeatureSequence> = features.into_iter().map(|f| f.0).collect();
    let dim = seqs
        .first()
        .map(FeatureSequence::dim)
        .ok_or_else(|| PyValueError::new_err("no training examples"))?;
    let model_cfg = ModelConfig {
        seed,
        ..ModelConfig::new(dim)
    };
    let mut cfg = TrainConfig {
        lr_phase1: lr1,
        epochs_phase1: epochs1,
        lr_phase2: lr2,
        epochs_phase2: epochs2,
        batch_size: batch,
        weights: LossWeights { alpha, beta, gamma },
        seed: seed.wrapping_add(2),
        ..TrainConfig::default()
    };
    cfg.augment.block_len = block_len;
    cfg.augment.seed = seed.wrapping_add(1);
    let (params, log) = py
        .detach(|| trainer::train(&model_cfg, &seqs, &labels, &cfg, |_| Ok(())))
        .map_err(py_err)?;
    Ok((PyModel(params), to_py(py, &log.epochs)?))
}

/// Four-granularity AUC/AP report as a dict.
#[pyfunction]
#[pyo3(signature = (model, features, records, thr=DEFAULT_THRESHOLD, score_source="wtcam"))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &PyModel,
    features: Vec<PyFeatures>,
    records: Vec<PyRecord>,
    thr: f64,
    score_source: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let source: ScoreSource = score_source.parse().map_err(PyValueError::new_err)?;
    let seqs: Vec<FeatureSequence> = features.into_iter().map(|f| f.0).collect();
    let records: Vec<VideoRecord> = records.into_iter().map(|r| r.0).collect();
    let report = metrics::evaluate(&model.0, &records, &seqs, thr, source).map_err(py_err)?;
    to_py(py, &report)
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    let set = ScoredSet::new(scores, labels).map_err(py_err)?;
    metrics::auc(&set).map_err(py_err)
}

#[pyfunction]
fn ap(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    let set = ScoredSet::new(scores, labels).map_err(py_err)?;
    metrics::ap(&set).map_err(py_err)
}

#[pyfunction]
fn bce(prob: f64, label: u8) -> PyResult<f64> {
    losses::bce(prob, label).map_err(py_err)
}

#[pyfunction]
fn sparsity(lam: Vec<f64>) -> f64 {
    losses::sparsity(&lam)
}

#[pyfunction]
fn smoothness(lam: Vec<f64>) -> f64 {
    losses::smoothness(&lam)
}

#[pyfunction]
fn alignment(lam_a: Vec<f64>, lam_b: Vec<f64>) -> PyResult<f64> {
    losses::alignment(&lam_a, &lam_b).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (seed=0, instances=20, max_t=16, max_d=8, eps=1e-5))]
fn gradcheck<'py>(
    py: Python<'py>,
    seed: u64,
    instances: usize,
    max_t: usize,
    max_d: usize,
    eps: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = GradcheckOptions {
        seed,
        instances,
        max_t,
        max_d,
        eps,
        ..Default::default()
    };
    let report = py.detach(|| run_gradcheck(&opts)).map_err(py_err)?;
    to_py(py, &report)
}

#[pymodule]
#[pyo3(name = "tadloc")]
fn tadloc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyFeatures>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyModel>()?;
    for f in [
        wrap_pyfunction!(read_features, m)?,
        wrap_pyfunction!(write_features, m)?,
        wrap_pyfunction!(load_manifest, m)?,
        wrap_pyfunction!(load_dataset, m)?,
        wrap_pyfunction!(generate_synthetic, m)?,
        wrap_pyfunction!(train, m)?,
        wrap_pyfunction!(evaluate, m)?,
        wrap_pyfunction!(auc, m)?,
        wrap_pyfunction!(ap, m)?,
        wrap_pyfunction!(bce, m)?,
        wrap_pyfunction!(sparsity, m)?,
        wrap_pyfunction!(smoothness, m)?,
        wrap_pyfunction!(alignment, m)?,
        wrap_pyfunction!(gradcheck, m)?,
    ] {
        m.add_function(f)?;
    }
    Ok(())
}
