//! Python bindings: configuration, ridge regression, the noise schedule,
//! conditioning, metrics and end-to-end experiments on synthetic data.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;

use spikediff_core as core;
use spikediff_core::dataset::RegionLabel;
use spikediff_core::diffusion::LatentImage;
use spikediff_core::pipeline::{ImageModels, Split, SyntheticData};
use spikediff_core::ppm::Image;

fn py_err(e: core::Error) -> PyErr {
    use core::Error::*;
    match e {
        Numeric(_) | Singular(_) => PyArithmeticError::new_err(e.to_string()),
        MissingArtifact { .. } => PyFileNotFoundError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn images(flat: Vec<Vec<f64>>, height: usize, width: usize) -> PyResult<Vec<Image>> {
    flat.into_iter()
        .map(|d| {
            let channels = if height * width == 0 { 0 } else { d.len() / (height * width) };
            Image::new(height, width, channels.max(1), d).map_err(py_err)
        })
        .collect()
}

fn region_set(codes: &[String]) -> PyResult<Vec<RegionLabel>> {
    if codes.is_empty() {
        return Ok(RegionLabel::ALL.to_vec());
    }
    codes.iter().map(|c| c.parse::<RegionLabel>().map_err(py_err)).collect()
}

/// Validated run configuration.
#[pyclass(name = "RunConfig", module = "spikediff_py")]
struct PyRunConfig {
    inner: core::config::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Builds from TOML text (defaults when omitted) plus `section.key=value`
    /// overrides.
    #[new]
    #[pyo3(signature = (toml = None, overrides = Vec::new()))]
    fn new(toml: Option<&str>, overrides: Vec<String>) -> PyResult<Self> {
        let inner = core::config::RunConfig::from_toml_with_overrides(toml.unwrap_or(""), &overrides).map_err(py_err)?;
        Ok(PyRunConfig { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn diffusion_steps(&self) -> usize {
        self.inner.diffusion.steps
    }

    #[getter]
    fn strength(&self) -> f64 {
        self.inner.diffusion.strength
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(seed={}, frames={})", self.inner.seed, self.inner.data.frames)
    }
}

/// Fitted ridge regression with standardized inputs.
#[pyclass(name = "Ridge", module = "spikediff_py")]
struct PyRidge {
    inner: core::regression::RidgeModel,
    cv_mean_mse: Option<Vec<f64>>,
}

#[pymethods]
impl PyRidge {
    #[staticmethod]
    fn fit(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, lam: f64) -> PyResult<Self> {
        let (x, y) = (matrix(x)?, matrix(y)?);
        let inner = core::regression::ridge_fit(x.view(), y.view(), lam).map_err(py_err)?;
        Ok(PyRidge { inner, cv_mean_mse: None })
    }

    /// Blocked k-fold selection over `lambda_grid`, refit on all rows.
    #[staticmethod]
    #[pyo3(signature = (x, y, lambda_grid, folds = 5))]
    fn cv(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, lambda_grid: Vec<f64>, folds: usize) -> PyResult<Self> {
        let (x, y) = (matrix(x)?, matrix(y)?);
        let (report, inner) = core::regression::ridge_cv(x.view(), y.view(), &lambda_grid, folds).map_err(py_err)?;
        Ok(PyRidge { inner, cv_mean_mse: Some(report.mean_mse) })
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(x)?;
        Ok(rows(&core::regression::ridge_predict(&self.inner, x.view()).map_err(py_err)?))
    }

    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.weights)
    }

    #[getter]
    fn intercept(&self) -> Vec<f64> {
        self.inner.intercept.to_vec()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn cv_mean_mse(&self) -> Option<Vec<f64>> {
        self.cv_mean_mse.clone()
    }
}

/// Linear β noise schedule.
#[pyclass(name = "Schedule", module = "spikediff_py")]
struct PySchedule {
    inner: core::diffusion::NoiseSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (steps = 50, beta_lo = 1e-4, beta_hi = 0.05))]
    fn new(steps: usize, beta_lo: f64, beta_hi: f64) -> PyResult<Self> {
        Ok(PySchedule { inner: core::diffusion::make_schedule(steps, beta_lo, beta_hi).map_err(py_err)? })
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        if t > self.inner.steps() {
            return Err(PyValueError::new_err(format!("step {t} is past the end of the schedule")));
        }
        Ok(self.inner.alpha_bar(t))
    }

    fn forward_step(&self, z_prev: Vec<f64>, t: usize, eps: Vec<f64>) -> PyResult<Vec<f64>> {
        let z = core::diffusion::forward_step(&LatentImage::flat(z_prev), t, &eps, &self.inner).map_err(py_err)?;
        Ok(z.values)
    }

    fn forward_jump(&self, z0: Vec<f64>, t: usize, eps: Vec<f64>) -> PyResult<Vec<f64>> {
        let z = core::diffusion::forward_jump(&LatentImage::flat(z0), t, &eps, &self.inner).map_err(py_err)?;
        Ok(z.values)
    }
}

#[pyfunction]
fn img2img_start_step(strength: f64, steps: usize) -> PyResult<usize> {
    core::diffusion::img2img_start_step(strength, steps).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (vision, text, w_vision = 0.6, w_text = 0.4))]
fn mix_conditioning(vision: Vec<f64>, text: Vec<f64>, w_vision: f64, w_text: f64) -> PyResult<Vec<f64>> {
    core::diffusion::mix_conditioning(&vision, &text, w_vision, w_text).map_err(py_err)
}

/// Pixel correlation, MSE and PSNR means plus two-way identification for
/// flattened `height × width` images.
#[pyfunction]
fn evaluate(recons: Vec<Vec<f64>>, truths: Vec<Vec<f64>>, height: usize, width: usize) -> PyResult<BTreeMap<String, f64>> {
    let t = core::pipeline::evaluate(&images(recons, height, width)?, &images(truths, height, width)?, None, None)
        .map_err(py_err)?;
    Ok(BTreeMap::from([
        ("correlation".to_string(), t.mean_correlation()),
        ("mse".to_string(), t.mean_mse()),
        ("psnr".to_string(), t.mean_psnr()),
        ("identification".to_string(), t.identification),
    ]))
}

/// Synthetic data, trained image models and decoding runs for one config.
#[pyclass(name = "Experiment", module = "spikediff_py")]
struct PyExperiment {
    cfg: core::config::RunConfig,
    seed: u64,
    data: SyntheticData,
    split: Split,
    models: Option<ImageModels>,
}

impl PyExperiment {
    fn models(&self) -> PyResult<&ImageModels> {
        self.models.as_ref().ok_or_else(|| PyValueError::new_err("call train() before decoding"))
    }
}

fn summary(stage1: &core::pipeline::MetricsTable, fin: &core::pipeline::MetricsTable, latent: f64) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for (prefix, t) in [("stage1", stage1), ("final", fin)] {
        m.insert(format!("{prefix}_correlation"), t.mean_correlation());
        m.insert(format!("{prefix}_mse"), t.mean_mse());
        m.insert(format!("{prefix}_identification"), t.identification);
        m.insert(format!("{prefix}_semantic_accuracy"), t.semantic_accuracy.unwrap_or(f64::NAN));
    }
    m.insert("latent_correlation".into(), latent);
    m
}

#[pymethods]
impl PyExperiment {
    /// Generates the movie and spike sessions; `seed` defaults to the
    /// config seed.
    #[new]
    #[pyo3(signature = (config, seed = None))]
    fn new(py: Python<'_>, config: &PyRunConfig, seed: Option<u64>) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let seed = seed.unwrap_or(cfg.seed);
        let (data, split) = py.detach(|| -> core::Result<_> {
            let data = core::pipeline::generate_data(&cfg, seed)?;
            let split = Split::blocked(cfg.data.frames, cfg.data.train_fraction)?;
            Ok((data, split))
        })
        .map_err(py_err)?;
        Ok(PyExperiment { cfg, seed, data, split, models: None })
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.data.movie.len()
    }

    #[getter]
    fn image_shape(&self) -> (usize, usize, usize) {
        self.data.movie.image_shape()
    }

    #[getter]
    fn train_frames(&self) -> Vec<usize> {
        self.split.train.clone()
    }

    #[getter]
    fn test_frames(&self) -> Vec<usize> {
        self.split.test.clone()
    }

    fn frames(&self) -> Vec<Vec<f64>> {
        self.data.movie.frames.iter().map(|f| f.data.clone()).collect()
    }

    fn labels(&self) -> Option<Vec<usize>> {
        self.data.movie.frame_labels.clone()
    }

    /// Frames × units spike counts.
    fn responses(&self) -> Vec<Vec<f64>> {
        rows(&self.data.responses.values)
    }

    fn unit_regions(&self) -> Vec<String> {
        self.data.responses.regions.iter().map(|r| r.code().to_string()).collect()
    }

    /// Trains the HVAE, semantic model, autoencoder and denoiser on the
    /// training frames.
    fn train(&mut self, py: Python<'_>) -> PyResult<()> {
        let (movie, split, cfg, seed) = (&self.data.movie, &self.split, &self.cfg, self.seed);
        let models = py.detach(|| core::pipeline::train_image_models(movie, split, cfg, seed)).map_err(py_err)?;
        self.models = Some(models);
        Ok(())
    }

    /// Fits both stages on training frames, reconstructs held-out frames and
    /// returns summary metrics.
    #[pyo3(signature = (seed = None))]
    fn decode(&self, py: Python<'_>, seed: Option<u64>) -> PyResult<BTreeMap<String, f64>> {
        let models = self.models()?;
        let seed = seed.unwrap_or(self.seed);
        let run = py
            .detach(|| core::pipeline::run_decoding(&self.data.responses, &self.data.movie, models, &self.split, &self.cfg, seed))
            .map_err(py_err)?;
        Ok(summary(&run.stage1_metrics, &run.final_metrics, run.latent_correlation))
    }

    /// Stage-1 and final reconstructions of the held-out frames, flattened.
    #[pyo3(signature = (seed = None))]
    fn reconstruct(&self, py: Python<'_>, seed: Option<u64>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let models = self.models()?;
        let seed = seed.unwrap_or(self.seed);
        let run = py
            .detach(|| core::pipeline::run_decoding(&self.data.responses, &self.data.movie, models, &self.split, &self.cfg, seed))
            .map_err(py_err)?;
        let flat = |v: &[Image]| v.iter().map(|i| i.data.clone()).collect::<Vec<_>>();
        Ok((flat(&run.images.stage1), flat(&run.images.final_images)))
    }

    /// One summary per region subset; an empty subset means every region.
    #[pyo3(signature = (subsets, seed = None))]
    fn ablate(&self, py: Python<'_>, subsets: Vec<Vec<String>>, seed: Option<u64>) -> PyResult<Vec<(String, BTreeMap<String, f64>)>> {
        let models = self.models()?;
        let subsets = subsets.iter().map(|s| region_set(s)).collect::<PyResult<Vec<_>>>()?;
        let seed = seed.unwrap_or(self.seed);
        let rows = py
            .detach(|| core::pipeline::ablate_regions(&self.data, models, &self.split, &self.cfg, &subsets, seed))
            .map_err(py_err)?;
        Ok(rows
            .iter()
            .map(|r| {
                let mut m = summary(&r.stage1, &r.final_metrics, r.latent_correlation);
                m.insert("units".into(), r.units as f64);
                (r.name(), m)
            })
            .collect())
    }

    /// Restricts the responses to the given regions in place.
    fn keep_regions(&mut self, codes: Vec<String>) -> PyResult<()> {
        let keep: BTreeSet<RegionLabel> = region_set(&codes)?.into_iter().collect();
        self.data.responses = core::dataset::filter_by_region(&self.data.responses, &keep).map_err(py_err)?;
        Ok(())
    }
}

#[pymodule]
fn spikediff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyRidge>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(img2img_start_step, m)?)?;
    m.add_function(wrap_pyfunction!(mix_conditioning, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
