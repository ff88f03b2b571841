use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use vdp::diffcore::Tensor;
use vdp::error::VdpError;
use vdp::losses::{LossSubset, LossWeights};
use vdp::tasks::{self, FitResult, TaskConfig, TaskKind};
use vdp::videoio::{self, MaskSequence, VideoSequence};
use vdp::{degrade, metrics, synth};

fn err(e: VdpError) -> PyErr {
    match e {
        VdpError::Io { .. } | VdpError::Image { .. } | VdpError::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn kind_of(name: &str) -> PyResult<TaskKind> {
    Ok(match name {
        "denoise" => TaskKind::Denoise,
        "interpolate" => TaskKind::Interpolate,
        "superres" => TaskKind::Superres,
        "remove" => TaskKind::Removal,
        _ => return Err(PyValueError::new_err(format!("unknown task `{name}`"))),
    })
}

/// A clip of frames with values in [0, 1], shaped (T, C, H, W).
#[pyclass(name = "Video", module = "pyvdp", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyVideo(VideoSequence);

#[pymethods]
impl PyVideo {
    #[new]
    fn new(data: Vec<f64>, shape: (usize, usize, usize, usize)) -> PyResult<Self> {
        let t = Tensor::new(&[shape.0, shape.1, shape.2, shape.3], data).map_err(err)?;
        Ok(Self(VideoSequence::new(t).map_err(err)?))
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self(videoio::load_frames(&dir).map_err(err)?))
    }

    #[staticmethod]
    #[pyo3(signature = (frames, height, width, step=2))]
    fn moving_square(frames: usize, height: usize, width: usize, step: usize) -> PyResult<Self> {
        Ok(Self(synth::moving_square(frames, height, width, step).map_err(err)?))
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        videoio::save_frames(&self.0, &dir).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        let (c, h, w) = self.0.frame_shape();
        (self.0.len(), c, h, w)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Flat row-major copy of the pixel values.
    fn to_list(&self) -> Vec<f64> {
        self.0.frames().data().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Video(shape={:?})", self.shape())
    }
}

/// Fitting hyperparameters for one task.
#[pyclass(name = "TaskConfig", module = "pyvdp", skip_from_py_object)]
#[derive(Clone)]
struct PyTaskConfig(TaskConfig);

#[pymethods]
impl PyTaskConfig {
    /// Laptop-sized configuration for `task`.
    #[new]
    #[pyo3(signature = (task="denoise"))]
    fn new(task: &str) -> PyResult<Self> {
        Ok(Self(TaskConfig::desk(kind_of(task)?)))
    }

    /// Named preset such as `paper-denoise` or `desk-superres`.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(Self(TaskConfig::preset(name).map_err(err)?))
    }

    #[getter]
    fn task(&self) -> &'static str {
        self.0.kind.name()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.0.epochs
    }

    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.0.epochs = v;
    }

    #[getter]
    fn lr(&self) -> f64 {
        self.0.lr
    }

    #[setter]
    fn set_lr(&mut self, v: f64) {
        self.0.lr = v;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.0.seed = v;
    }

    /// Loss weights as (rec, spl, var).
    #[getter]
    fn weights(&self) -> (f64, f64, f64) {
        let w = self.0.weights;
        (w.rec, w.spl, w.var)
    }

    #[setter]
    fn set_weights(&mut self, w: (f64, f64, f64)) {
        self.0.weights = LossWeights::new(w.0, w.1, w.2);
    }

    #[getter]
    fn ablate(&self) -> &'static str {
        self.0.ablate.name()
    }

    #[setter]
    fn set_ablate(&mut self, v: &str) -> PyResult<()> {
        self.0.ablate = v.parse::<LossSubset>().map_err(err)?;
        Ok(())
    }

    #[getter]
    fn scale(&self) -> usize {
        self.0.scale
    }

    #[setter]
    fn set_scale(&mut self, v: usize) {
        self.0.scale = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "TaskConfig(task={}, epochs={}, lr={}, weights={:?})",
            self.task(),
            self.0.epochs,
            self.0.lr,
            self.weights()
        )
    }
}

/// Outcome of a fit: reconstructed frames and the per-epoch loss curve.
#[pyclass(name = "Fit", module = "pyvdp", unsendable)]
struct PyFit(FitResult);

#[pymethods]
impl PyFit {
    #[getter]
    fn frames(&self) -> PyResult<PyVideo> {
        Ok(PyVideo(self.0.video().map_err(err)?))
    }

    /// Loss curve as a list of (epoch, total, rec, spl, var).
    #[getter]
    fn curve(&self) -> Vec<(usize, f64, f64, f64, f64)> {
        self.0.curve.iter().map(|p| (p.epoch, p.total, p.rec, p.spl, p.var)).collect()
    }

    #[getter]
    fn early_stop_epoch(&self) -> Option<usize> {
        self.0.early_stop_epoch
    }

    /// Decodes `factor - 1` frames between every fitted pair.
    fn interpolate(&self, factor: usize) -> PyResult<PyVideo> {
        let alphas = tasks::alphas_for_factor(factor).map_err(err)?;
        Ok(PyVideo(tasks::interpolate_fitted(&self.0, &alphas).map_err(err)?))
    }
}

fn with_kind(cfg: Option<&PyTaskConfig>, kind: TaskKind) -> TaskConfig {
    match cfg {
        Some(c) => TaskConfig { kind, ..c.0.clone() },
        None => TaskConfig::desk(kind),
    }
}

#[pyfunction]
#[pyo3(signature = (video, config=None))]
fn denoise(video: &PyVideo, config: Option<&PyTaskConfig>) -> PyResult<PyFit> {
    let cfg = with_kind(config, TaskKind::Denoise);
    Ok(PyFit(tasks::denoise(&video.0, &cfg).map_err(err)?))
}

#[pyfunction]
#[pyo3(signature = (video, config=None))]
fn fit_interpolate(video: &PyVideo, config: Option<&PyTaskConfig>) -> PyResult<PyFit> {
    let cfg = with_kind(config, TaskKind::Interpolate);
    Ok(PyFit(tasks::fit(&video.0, &cfg).map_err(err)?))
}

#[pyfunction]
#[pyo3(signature = (video_lr, scale=4, config=None))]
fn superresolve(video_lr: &PyVideo, scale: usize, config: Option<&PyTaskConfig>) -> PyResult<PyFit> {
    let mut cfg = with_kind(config, TaskKind::Superres);
    cfg.scale = scale;
    Ok(PyFit(tasks::superresolve(&video_lr.0, &cfg).map_err(err)?))
}

/// Fills the pixels where `mask` is 0. The mask is (1, H, W) flat data reused for every frame.
#[pyfunction]
#[pyo3(signature = (video, mask, config=None))]
fn remove_object(video: &PyVideo, mask: Vec<f64>, config: Option<&PyTaskConfig>) -> PyResult<PyFit> {
    let (_, h, w) = video.0.frame_shape();
    let m = Tensor::new(&[1, h, w], mask).map_err(err)?;
    let masks = MaskSequence::stationary(&m, video.0.len()).map_err(err)?;
    let cfg = with_kind(config, TaskKind::Removal);
    Ok(PyFit(tasks::remove_object(&video.0, &cfg, &masks).map_err(err)?))
}

#[pyfunction]
fn add_gaussian(video: &PyVideo, sigma: f64, seed: u64) -> PyResult<PyVideo> {
    Ok(PyVideo(degrade::add_gaussian(&video.0, sigma, seed).map_err(err)?))
}

#[pyfunction]
fn add_poisson(video: &PyVideo, lam: f64, seed: u64) -> PyResult<PyVideo> {
    Ok(PyVideo(degrade::add_poisson(&video.0, lam, seed).map_err(err)?))
}

#[pyfunction]
fn replace_frame_with_noise(video: &PyVideo, index: usize, seed: u64) -> PyResult<PyVideo> {
    Ok(PyVideo(degrade::replace_frame_with_noise(&video.0, index, seed).map_err(err)?))
}

#[pyfunction]
fn make_lowres(video: &PyVideo, scale: usize) -> PyResult<PyVideo> {
    Ok(PyVideo(degrade::make_lowres(&video.0, scale).map_err(err)?))
}

#[pyfunction]
fn mean_psnr(a: &PyVideo, b: &PyVideo) -> PyResult<f64> {
    metrics::mean_psnr(&a.0, &b.0).map_err(err)
}

/// Per-frame (psnr, ssim); ssim is None for frames smaller than the window.
#[pyfunction]
fn compare(a: &PyVideo, b: &PyVideo) -> PyResult<Vec<(f64, Option<f64>)>> {
    let scores = metrics::compare_videos(&a.0, &b.0).map_err(err)?;
    Ok(scores.into_iter().map(|s| (s.psnr, s.ssim)).collect())
}

#[pyfunction]
#[pyo3(signature = (video, bins=64))]
fn nmi_matrix(video: &PyVideo, bins: usize) -> PyResult<Vec<Vec<f64>>> {
    metrics::nmi_matrix(&video.0, bins).map_err(err)
}

/// Runs the command-line tool in-process and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    vdp::cli::run(std::iter::once("vdp".to_string()).chain(args))
}

#[pymodule]
fn pyvdp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVideo>()?;
    m.add_class::<PyTaskConfig>()?;
    m.add_class::<PyFit>()?;
    for f in [
        wrap_pyfunction!(denoise, m)?,
        wrap_pyfunction!(fit_interpolate, m)?,
        wrap_pyfunction!(superresolve, m)?,
        wrap_pyfunction!(remove_object, m)?,
        wrap_pyfunction!(add_gaussian, m)?,
        wrap_pyfunction!(add_poisson, m)?,
        wrap_pyfunction!(replace_frame_with_noise, m)?,
        wrap_pyfunction!(make_lowres, m)?,
        wrap_pyfunction!(mean_psnr, m)?,
        wrap_pyfunction!(compare, m)?,
        wrap_pyfunction!(nmi_matrix, m)?,
        wrap_pyfunction!(run_cli, m)?,
    ] {
        m.add_function(f)?;
    }
    Ok(())
}
