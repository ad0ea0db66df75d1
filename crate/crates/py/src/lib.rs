//! Python bindings for the `glee_core` library.

use std::path::PathBuf;

use glee_core::au::DatasetStats;
use glee_core::embed::EmbeddingConfig;
use glee_core::eval::EvalReport;
use glee_core::geometry::{crop_region_named, CropName, LandmarkSet68};
use glee_core::morphable::{self, CoefficientTable, FitConfig};
use glee_core::train::fixtures::{ClusterFixture, PlantedAuFixture};
use glee_core::train::{
    self, compute_stats, AuData, AuManifest, Checkpoint, FaceRef, FaceSample, Stage, TripletData, TripletManifest,
};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: glee_core::Error) -> PyErr {
    use glee_core::Error as E;
    match err {
        E::Io { .. } | E::Image { .. } => PyIOError::new_err(err.to_string()),
        E::Numerical(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for glee_core::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Crop rectangle as `(row_start, row_end, col_start, col_end)`, end exclusive.
#[pyfunction]
fn crop_region(name: &str, height: usize, width: usize) -> PyResult<(usize, usize, usize, usize)> {
    let r = crop_region_named(name, height, width).or_py()?;
    Ok((r.row_start, r.row_end, r.col_start, r.col_end))
}

/// The sixteen crop names in network order.
#[pyfunction]
fn crop_names() -> Vec<&'static str> {
    CropName::ALL.iter().map(|c| c.as_str()).collect()
}

#[pyfunction]
#[pyo3(signature = (anchor, positive, negative, margin = 0.2))]
fn triplet_loss(anchor: Vec<f64>, positive: Vec<f64>, negative: Vec<f64>, margin: f64) -> PyResult<f64> {
    glee_core::embed::triplet_loss(&anchor, &positive, &negative, margin).or_py()
}

/// Gradients of [`triplet_loss`] with respect to anchor, positive and negative.
#[pyfunction]
#[pyo3(signature = (anchor, positive, negative, margin = 0.2))]
fn triplet_loss_grad(
    anchor: Vec<f64>,
    positive: Vec<f64>,
    negative: Vec<f64>,
    margin: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let g = glee_core::embed::triplet_loss_grad(&anchor, &positive, &negative, margin).or_py()?;
    Ok((g.anchor, g.positive, g.negative))
}

/// Class-weighted cross entropy of one frame; `ratios` are per-AU occurrence rates.
#[pyfunction]
fn weighted_ce(probs: Vec<f64>, labels: Vec<u8>, ratios: Vec<f64>) -> PyResult<f64> {
    let stats = DatasetStats::new(ratios).or_py()?;
    glee_core::au::weighted_ce(&probs, &labels, &stats).or_py()
}

fn report_dict<'py>(py: Python<'py>, report: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("f1", report.per_au_f1())?;
    let counts: Vec<(usize, usize, usize, usize)> = report.per_au.iter().map(|s| (s.tp, s.fp, s.fn_, s.tn)).collect();
    d.set_item("counts", counts)?;
    d.set_item("vacuous", report.per_au.iter().map(|s| s.vacuous).collect::<Vec<_>>())?;
    d.set_item("average_f1", report.average_f1)?;
    d.set_item("frames", report.frames)?;
    Ok(d)
}

/// Per-AU F1 of thresholded predictions against labels, one row per frame.
#[pyfunction]
fn f1_per_au<'py>(
    py: Python<'py>,
    predictions: Vec<Vec<bool>>,
    labels: Vec<Vec<bool>>,
) -> PyResult<Bound<'py, PyDict>> {
    let report = glee_core::eval::f1_per_au(&predictions, &labels).or_py()?;
    report_dict(py, &report)
}

/// Mean within-group variance of embeddings grouped by identical label vectors.
#[pyfunction]
fn ave_var(embeddings: Vec<Vec<f32>>, labels: Vec<Vec<u8>>) -> PyResult<f64> {
    Ok(glee_core::eval::ave_var(&embeddings, &labels).or_py()?.ave_var)
}

/// A linear 3D face model with identity and expression bases.
#[pyclass(frozen)]
struct MorphableModel {
    inner: morphable::MorphableModel,
}

#[pymethods]
impl MorphableModel {
    /// Deterministic synthetic model for experiments and tests.
    #[staticmethod]
    #[pyo3(signature = (seed = 7))]
    fn synthetic(seed: u64) -> Self {
        MorphableModel {
            inner: morphable::synthetic::synthetic_model(seed),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(MorphableModel {
            inner: morphable::MorphableModel::load(&path).or_py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).or_py()
    }

    #[getter]
    fn num_shape(&self) -> usize {
        self.inner.num_shape()
    }

    #[getter]
    fn num_expr(&self) -> usize {
        self.inner.num_expr()
    }

    /// Fits pose, shape and expression to 68 `(x, y)` landmarks of a
    /// `height` x `width` frame.
    fn fit<'py>(
        &self,
        py: Python<'py>,
        landmarks: Vec<[f64; 2]>,
        height: usize,
        width: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let detected = LandmarkSet68::new(landmarks, height, width).or_py()?;
        let fit = morphable::fit_coefficients(&self.inner, &detected, &FitConfig::default()).or_py()?;
        let d = PyDict::new(py);
        d.set_item("f_s", fit.f_s)?;
        d.set_item("f_exp", fit.f_exp)?;
        d.set_item("initial_cost", fit.initial_cost)?;
        d.set_item("final_cost", fit.final_cost)?;
        d.set_item("iterations", fit.iterations)?;
        d.set_item("converged", fit.converged)?;
        d.set_item("cost_history", fit.cost_history)?;
        Ok(d)
    }
}

/// Hyperparameters for one training stage.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct TrainConfig {
    inner: train::TrainConfig,
}

#[pymethods]
impl TrainConfig {
    #[staticmethod]
    fn pretrain() -> Self {
        TrainConfig {
            inner: train::TrainConfig::pretrain(),
        }
    }

    #[staticmethod]
    fn finetune() -> Self {
        TrainConfig {
            inner: train::TrainConfig::finetune(),
        }
    }

    /// Parses TOML; keys it leaves out take the defaults of `stage`.
    #[staticmethod]
    #[pyo3(signature = (text, stage = "finetune"))]
    fn from_toml(text: &str, stage: &str) -> PyResult<Self> {
        let stage = match stage {
            "pretrain" => Stage::Pretrain,
            "finetune" => Stage::Finetune,
            other => return Err(PyValueError::new_err(format!("unknown stage `{other}`"))),
        };
        Ok(TrainConfig {
            inner: train::TrainConfig::from_toml(text, stage).or_py()?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Switches to the narrow embedding networks.
    fn compact(&mut self) {
        self.inner.embedding = EmbeddingConfig::compact();
    }

    #[getter]
    fn stage(&self) -> &'static str {
        self.inner.stage.as_str()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.epochs = v;
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }

    #[setter]
    fn set_batch_size(&mut self, v: usize) {
        self.inner.batch_size = v;
    }

    #[getter]
    fn learning_rate(&self) -> f64 {
        self.inner.optimizer.learning_rate
    }

    #[setter]
    fn set_learning_rate(&mut self, v: f64) {
        self.inner.optimizer.learning_rate = v;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn fresh_start(&self) -> bool {
        self.inner.fresh_start
    }

    #[setter]
    fn set_fresh_start(&mut self, v: bool) {
        self.inner.fresh_start = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainConfig(stage={}, epochs={}, batch_size={}, learning_rate={})",
            self.inner.stage.as_str(),
            self.inner.epochs,
            self.inner.batch_size,
            self.inner.optimizer.learning_rate
        )
    }
}

/// A trained embedding network and AU classifier, stored as a checkpoint.
#[pyclass(frozen)]
struct Model {
    inner: Checkpoint,
}

impl Model {
    fn sample(&self, image: PathBuf, landmarks: PathBuf) -> PyResult<FaceSample> {
        let face = FaceRef { image, landmarks };
        FaceSample::load(&face, &self.inner.meta.config.alignment).or_py()
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: Checkpoint::load(&path).or_py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).or_py()
    }

    #[getter]
    fn stage(&self) -> &'static str {
        self.inner.meta.stage.as_str()
    }

    #[getter]
    fn num_aus(&self) -> usize {
        self.inner.model.num_aus()
    }

    #[getter]
    fn loss_history(&self) -> Vec<f64> {
        self.inner.meta.loss_history.clone()
    }

    /// The 16-d expression embedding of one frame, with its global and local parts.
    fn embed<'py>(&self, py: Python<'py>, image: PathBuf, landmarks: PathBuf) -> PyResult<Bound<'py, PyDict>> {
        let sample = self.sample(image, landmarks)?;
        let e = self.inner.model.embed(&[&sample]).or_py()?.remove(0);
        let d = PyDict::new(py);
        d.set_item("embedding", e.embedding)?;
        d.set_item("global", e.global)?;
        d.set_item("local", e.local)?;
        Ok(d)
    }

    /// AU probabilities and occurrences of one frame given its expression coefficients.
    fn predict<'py>(
        &self,
        py: Python<'py>,
        image: PathBuf,
        landmarks: PathBuf,
        f_exp: Vec<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let sample = self.sample(image, landmarks)?;
        let p = self.inner.model.predict(&[&sample], &[&f_exp]).or_py()?.remove(0);
        let d = PyDict::new(py);
        d.set_item("initial", p.initial)?;
        d.set_item("fused", p.fused)?;
        d.set_item("occurrences", p.occurrences)?;
        Ok(d)
    }

    /// Frame-level F1 over an AU manifest and its coefficient table.
    fn evaluate<'py>(&self, py: Python<'py>, manifest: PathBuf, coefficients: PathBuf) -> PyResult<Bound<'py, PyDict>> {
        let data = load_au_data(&manifest, &coefficients, &self.inner.meta.config)?.0;
        let out = glee_core::eval::evaluate(&self.inner.model, &data).or_py()?;
        report_dict(py, &out.report)
    }
}

fn load_au_data(
    manifest: &std::path::Path,
    coefficients: &std::path::Path,
    config: &train::TrainConfig,
) -> PyResult<(AuData, DatasetStats)> {
    let manifest = AuManifest::read(manifest).or_py()?;
    let table = CoefficientTable::read(coefficients).or_py()?;
    let stats = compute_stats(&manifest).or_py()?;
    Ok((AuData::load(&manifest, &table, &config.alignment).or_py()?, stats))
}

/// Triplet pretraining of the embedding network on a triplet manifest.
#[pyfunction]
fn pretrain(config: &TrainConfig, manifest: PathBuf) -> PyResult<Model> {
    let cfg = &config.inner;
    let data = TripletData::load(&TripletManifest::read(&manifest).or_py()?, &cfg.alignment).or_py()?;
    Ok(Model {
        inner: train::pretrain(&data, cfg).or_py()?,
    })
}

/// AU finetuning; `init` is a pretrained or finetuned model unless the
/// config asks for a fresh start.
#[pyfunction]
#[pyo3(signature = (config, manifest, coefficients, init = None))]
fn finetune(config: &TrainConfig, manifest: PathBuf, coefficients: PathBuf, init: Option<&Model>) -> PyResult<Model> {
    let cfg = &config.inner;
    let (data, stats) = load_au_data(&manifest, &coefficients, cfg)?;
    Ok(Model {
        inner: train::finetune(&data, init.map(|m| &m.inner), &stats, cfg).or_py()?,
    })
}

/// Writes synthetic AU frames with planted label signals; returns the
/// manifest and coefficient table paths.
#[pyfunction]
#[pyo3(signature = (out, frames = 60, aus = 12, subjects = 6, seed = 0))]
fn synth_planted(out: PathBuf, frames: usize, aus: usize, subjects: usize, seed: u64) -> PyResult<(PathBuf, PathBuf)> {
    PlantedAuFixture::generate(seed, frames, aus, subjects)
        .or_py()?
        .write(&out)
        .or_py()
}

/// Writes two separable face clusters with train and held-out triplet manifests.
#[pyfunction]
#[pyo3(signature = (out, triplets = 200, pool = 20, seed = 0))]
fn synth_clusters(out: PathBuf, triplets: usize, pool: usize, seed: u64) -> PyResult<(PathBuf, PathBuf)> {
    ClusterFixture::generate(seed, triplets, triplets / 2, pool)
        .or_py()?
        .write(&out)
        .or_py()
}

#[pymodule]
fn glee(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(crop_region, m)?)?;
    m.add_function(wrap_pyfunction!(crop_names, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss_grad, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_ce, m)?)?;
    m.add_function(wrap_pyfunction!(f1_per_au, m)?)?;
    m.add_function(wrap_pyfunction!(ave_var, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    m.add_function(wrap_pyfunction!(synth_planted, m)?)?;
    m.add_function(wrap_pyfunction!(synth_clusters, m)?)?;
    m.add_class::<MorphableModel>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<Model>()?;
    Ok(())
}
