//! Python bindings: fonts and outlines, the differentiable rasterizer,
//! glyph deformation, condition maps, scoring, planning and whole jobs.
//! Structured results cross the boundary as plain dicts and lists.

use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde_json::Value;

use wordart_core::diffrast::{self, RasterConfig};
use wordart_core::fontparse::{self, FontFace, GlyphOutline};
use wordart_core::genbackends::{self, MockBackend, StyleBackend, StylizeRequest, TexturizeRequest};
use wordart_core::image::Image as CoreImage;
use wordart_core::orchestrator::{self, JobRequest, Pipeline, PipelineOptions};
use wordart_core::planner;
use wordart_core::semtypo;
use wordart_core::shapeparam::{self, RegionMode, RegionPolicy};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (v.to_string(),))?.unbind())
}

fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let json = obj.py().import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

/// Row-major image with values in [0, 1] and 1 or 3 channels.
#[pyclass(name = "Image", module = "wordart", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyImage {
    inner: CoreImage,
}

#[pymethods]
impl PyImage {
    /// `Image(width, height, channels, data)` with `data` a flat list.
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        CoreImage::new(width, height, channels, data)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn from_png(data: &[u8]) -> PyResult<Self> {
        CoreImage::from_png(data).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_png<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = self.inner.to_png().map_err(value_err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, x: usize, y: usize, c: usize) -> PyResult<f64> {
        if x >= self.inner.width() || y >= self.inner.height() || c >= self.inner.channels() {
            return Err(PyKeyError::new_err((x, y, c)));
        }
        Ok(self.inner.get(x, y, c))
    }

    fn sum(&self) -> f64 {
        self.inner.sum()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn luminance(&self) -> Self {
        Self {
            inner: self.inner.luminance(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Image(width={}, height={}, channels={})",
            self.inner.width(),
            self.inner.height(),
            self.inner.channels()
        )
    }
}

#[pyclass(name = "Font", module = "wordart", frozen, skip_from_py_object)]
pub struct PyFont {
    face: FontFace,
}

#[pymethods]
impl PyFont {
    /// Parses TrueType bytes.
    #[new]
    fn new(data: &[u8]) -> PyResult<Self> {
        fontparse::load_font(data).map(|face| Self { face }).map_err(value_err)
    }

    #[staticmethod]
    fn builtin() -> PyResult<Self> {
        Self::new(fontparse::builtin_font_bytes())
    }

    #[staticmethod]
    fn open(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        Self::new(&bytes)
    }

    #[getter]
    fn units_per_em(&self) -> u16 {
        self.face.units_per_em()
    }

    #[getter]
    fn num_glyphs(&self) -> usize {
        self.face.num_glyphs()
    }

    fn has_glyph(&self, c: char) -> bool {
        self.face.has_glyph(c)
    }

    /// Outline of `c` in y-down pixels at `em_size_px`.
    fn glyph(&self, c: char, em_size_px: f64) -> PyResult<PyOutline> {
        fontparse::extract_glyph(&self.face, c, em_size_px)
            .map(|inner| PyOutline { inner })
            .map_err(value_err)
    }
}

/// Glyph outline made of closed cubic contours.
#[pyclass(name = "Outline", module = "wordart", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyOutline {
    inner: GlyphOutline,
}

#[pymethods]
impl PyOutline {
    /// Contours as lists of segments, each `[(x0, y0), (x1, y1), (x2, y2), (x3, y3)]`.
    #[staticmethod]
    fn from_contours(contours: Vec<Vec<[(f64, f64); 4]>>) -> Self {
        let contours = contours
            .into_iter()
            .map(|segs| {
                fontparse::Contour::new(
                    segs.into_iter()
                        .map(|s| {
                            let p = s.map(|(x, y)| wordart_core::geom::Point::new(x, y));
                            wordart_core::geom::CubicSegment::new(p[0], p[1], p[2], p[3])
                        })
                        .collect(),
                )
            })
            .collect();
        Self {
            inner: GlyphOutline {
                contours,
                em_size_px: 0.0,
                advance_px: 0.0,
            },
        }
    }

    fn contours(&self) -> Vec<Vec<[(f64, f64); 4]>> {
        self.inner
            .contours
            .iter()
            .map(|c| c.segments.iter().map(|s| s.points().map(|p| (p.x, p.y))).collect())
            .collect()
    }

    /// `"positive_area"` or `"negative_area"` per contour.
    fn orientations(&self) -> Vec<String> {
        self.inner
            .contours
            .iter()
            .map(|c| match c.orientation {
                fontparse::Orientation::PositiveArea => "positive_area".to_string(),
                fontparse::Orientation::NegativeArea => "negative_area".to_string(),
            })
            .collect()
    }

    #[getter]
    fn segment_count(&self) -> usize {
        self.inner.segment_count()
    }

    #[getter]
    fn advance_px(&self) -> f64 {
        self.inner.advance_px
    }

    fn normalized(&self) -> PyResult<Self> {
        fontparse::normalize_outline(&self.inner)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    fn fit_to_canvas(&self, width: usize, height: usize, margin: f64) -> Self {
        Self {
            inner: self.inner.fit_to_canvas(width, height, margin),
        }
    }

    /// The flat parameter vector (8 reals per segment).
    fn params(&self) -> Vec<f64> {
        shapeparam::to_params(&self.inner).values
    }

    fn to_svg(&self, width: usize, height: usize) -> String {
        semtypo::outline_to_svg(&self.inner, width, height)
    }
}

fn raster_config(width: usize, height: usize, tau: f64, subdiv: usize, supersample: usize) -> PyResult<RasterConfig> {
    let cfg = RasterConfig {
        width,
        height,
        smoothing_tau: tau,
        subdiv,
        supersample,
    };
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// Soft coverage image of an outline.
#[pyfunction]
#[pyo3(signature = (outline, width=64, height=64, tau=1.0, subdiv=16, supersample=2))]
fn rasterize(outline: &PyOutline, width: usize, height: usize, tau: f64, subdiv: usize, supersample: usize) -> PyResult<PyImage> {
    let cfg = raster_config(width, height, tau, subdiv, supersample)?;
    let r = diffrast::rasterize(&shapeparam::to_params(&outline.inner), &cfg).map_err(value_err)?;
    Ok(PyImage { inner: r.image })
}

/// Gradient of `sum(dl_dimage * coverage)` with respect to the outline's
/// parameter vector.
#[pyfunction]
#[pyo3(signature = (outline, dl_dimage, tau=1.0, subdiv=16, supersample=2))]
fn loss_gradient(outline: &PyOutline, dl_dimage: &PyImage, tau: f64, subdiv: usize, supersample: usize) -> PyResult<Vec<f64>> {
    let cfg = raster_config(dl_dimage.inner.width(), dl_dimage.inner.height(), tau, subdiv, supersample)?;
    diffrast::loss_gradient(&shapeparam::to_params(&outline.inner), &cfg, &dl_dimage.inner)
        .map(|g| g.values)
        .map_err(value_err)
}

/// Deforms character `c` towards a library silhouette; returns a dict with
/// `svg`, `png`, `target_iou_before`, `target_iou_after`, `loss_trace`.
#[pyfunction]
#[pyo3(signature = (c, target="circle", ratio=None, steps=200, seed=0, canvas=64, margin=12.0, font_path=None))]
#[allow(clippy::too_many_arguments)]
fn deform(
    py: Python<'_>,
    c: char,
    target: &str,
    ratio: Option<f64>,
    steps: usize,
    seed: u64,
    canvas: usize,
    margin: f64,
    font_path: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let face = orchestrator::resolve_font(font_path.unwrap_or(orchestrator::BUILTIN_FONT), None).map_err(value_err)?;
    let mut settings = orchestrator::RunSettings {
        canvas,
        margin,
        ..Default::default()
    };
    settings.deform.steps = steps;
    settings.deform.init_jitter = 0.0;
    let policy = match ratio {
        Some(r) => RegionPolicy {
            mode: RegionMode::SaliencyRatio,
            contour_indices: Vec::new(),
            deform_ratio: r,
        },
        None => RegionPolicy::all(),
    };
    let out = py
        .detach(|| {
            let glyph = orchestrator::prepare_glyph(&face, c, &settings.raster(), settings.margin).map_err(|e| e.to_string())?;
            orchestrator::deform_glyph(&glyph, target, &policy, &settings.deform_config(seed)).map_err(|e| e.to_string())
        })
        .map_err(PyValueError::new_err)?;
    let png = out.render.to_png().map_err(value_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("svg", out.svg)?;
    dict.set_item("png", PyBytes::new(py, &png))?;
    dict.set_item("target_iou_before", out.result.target_iou_before)?;
    dict.set_item("target_iou_after", out.result.target_iou_after)?;
    dict.set_item("loss_trace", out.result.loss_trace)?;
    Ok(dict.into_any().unbind())
}

#[pyfunction]
fn depth_map(glyph_raster: &PyImage) -> PyImage {
    PyImage {
        inner: genbackends::depth_map(&glyph_raster.inner),
    }
}

#[pyfunction]
fn control_map(image: &PyImage) -> PyImage {
    PyImage {
        inner: genbackends::control_map(&image.inner),
    }
}

/// Deterministic procedural stylization.
#[pyfunction]
#[pyo3(signature = (prompt, depth, seed=0, strength=genbackends::DEFAULT_STRENGTH))]
fn mock_stylize(prompt: &str, depth: &PyImage, seed: u64, strength: f64) -> PyResult<PyImage> {
    let req = StylizeRequest {
        prompt: prompt.to_string(),
        depth: depth.inner.clone(),
        seed,
        strength,
    };
    MockBackend.stylize(&req).map(|inner| PyImage { inner }).map_err(value_err)
}

/// Deterministic procedural texturing.
#[pyfunction]
#[pyo3(signature = (prompt, control, seed=0))]
fn mock_texturize(prompt: &str, control: &PyImage, seed: u64) -> PyResult<PyImage> {
    let req = TexturizeRequest {
        prompt: prompt.to_string(),
        control: control.inner.clone(),
        seed,
    };
    MockBackend.texturize(&req).map(|inner| PyImage { inner }).map_err(value_err)
}

/// `{"legibility", "passed", "threshold"}`.
#[pyfunction]
#[pyo3(signature = (candidate, original_mask, threshold=genbackends::DEFAULT_THRESHOLD))]
fn legibility_score(py: Python<'_>, candidate: &PyImage, original_mask: &PyImage, threshold: f64) -> PyResult<Py<PyAny>> {
    let r = genbackends::legibility_score(&candidate.inner, &original_mask.inner, threshold).map_err(value_err)?;
    to_py(py, &serde_json::to_value(r).map_err(value_err)?)
}

/// Rule-based directives for a free-form request.
#[pyfunction]
fn plan(py: Python<'_>, user_text: &str) -> PyResult<Py<PyAny>> {
    let d = planner::plan_with_rules(user_text).map_err(value_err)?;
    to_py(py, &d.to_json())
}

/// Validates a directives dict, filling defaults; raises `ValueError`
/// listing every offending field.
#[pyfunction]
fn validate_directives(py: Python<'_>, raw: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
    let d = planner::validate_directives(&from_py(raw)?).map_err(value_err)?;
    to_py(py, &d.to_json())
}

/// Runs a job with the mock backends and returns its manifest.
#[pyfunction]
#[pyo3(signature = (text, user_text, job_root, font_path=None, overrides=None, steps=None, threshold=None, workers=None))]
#[allow(clippy::too_many_arguments)]
fn run_job(
    py: Python<'_>,
    text: &str,
    user_text: &str,
    job_root: &str,
    font_path: Option<&str>,
    overrides: Option<&Bound<'_, PyAny>>,
    steps: Option<usize>,
    threshold: Option<f64>,
    workers: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let mut req = JobRequest::new(text, user_text);
    if let Some(f) = font_path {
        req.font_ref = f.to_string();
    }
    req.overrides = overrides.map(from_py).transpose()?;
    let mut options = PipelineOptions::new(job_root);
    if let Some(s) = steps {
        options.settings.deform.steps = s;
    }
    if let Some(t) = threshold {
        options.settings.threshold = t;
    }
    if let Some(w) = workers {
        options.workers = w.max(1);
    }
    let pipeline = Pipeline::new(options).with_backends(orchestrator::Backends {
        style: Arc::new(MockBackend),
        scorer: Arc::new(genbackends::LegibilityScorer),
        planner: None,
    });
    let record = py.detach(|| pipeline.run_request(req)).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &serde_json::to_value(&record).map_err(value_err)?)
}

#[pymodule]
fn wordart(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyFont>()?;
    m.add_class::<PyOutline>()?;
    m.add_function(wrap_pyfunction!(rasterize, m)?)?;
    m.add_function(wrap_pyfunction!(loss_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(deform, m)?)?;
    m.add_function(wrap_pyfunction!(depth_map, m)?)?;
    m.add_function(wrap_pyfunction!(control_map, m)?)?;
    m.add_function(wrap_pyfunction!(mock_stylize, m)?)?;
    m.add_function(wrap_pyfunction!(mock_texturize, m)?)?;
    m.add_function(wrap_pyfunction!(legibility_score, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(validate_directives, m)?)?;
    m.add_function(wrap_pyfunction!(run_job, m)?)?;
    m.add("TARGET_SHAPES", semtypo::TARGET_LIBRARY.to_vec())?;
    Ok(())
}
