//! Glyph deformation toward a semantic silhouette.
//!
//! The objective is
//!
//! ```text
//! L = w_target · (1 − softIoU(render, target))
//!   + w_tone   · MSE(blur(render), blur(original render))
//!   + w_smooth · mean squared displacement of free coordinates
//! ```
//!
//! minimized by plain gradient descent on the free control-point coordinates.
//! Image-space gradients of the first two terms are pushed through
//! [`crate::diffrast::gradient_from_slice`].

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffrast::{gradient_from_slice, rasterize, RasterConfig, RasterError};
use crate::fontparse::{Contour, GlyphOutline};
use crate::geom::{flatten_contour, signed_area, CubicSegment, Point};
use crate::image::Image;
use crate::shapeparam::{apply_update, select_region, to_params, FreedomMask, ParamError, ParamVector, RegionPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeformError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("invalid deform config: {0}")]
    BadConfig(String),
    #[error("unknown target shape {0:?}")]
    UnknownTarget(String),
    #[error("loss became non-finite after {} steps", .partial.loss_trace.len())]
    NonFiniteLoss { partial: Box<DeformResult> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformConfig {
    pub steps: usize,
    pub step_size: f64,
    pub w_target: f64,
    pub w_tone: f64,
    pub w_smooth: f64,
    pub tone_blur_radius: f64,
    pub raster: RasterConfig,
    pub seed: u64,
    /// Standard deviation (px) of a seeded perturbation of the free
    /// coordinates before the first step; 0 starts from the glyph itself.
    #[serde(default)]
    pub init_jitter: f64,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: 15.0,
            w_target: 1.0,
            w_tone: 0.5,
            w_smooth: 0.001,
            tone_blur_radius: 2.0,
            raster: RasterConfig::default(),
            seed: 0,
            init_jitter: 0.0,
        }
    }
}

impl DeformConfig {
    pub fn validate(&self) -> Result<(), DeformError> {
        self.raster.validate()?;
        if self.steps < 1 {
            return Err(DeformError::BadConfig("steps must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(DeformError::BadConfig(format!("step_size {}", self.step_size)));
        }
        let weights = [self.w_target, self.w_tone, self.w_smooth];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().all(|w| *w == 0.0) {
            return Err(DeformError::BadConfig("weights must be non-negative with at least one positive".into()));
        }
        if !(self.tone_blur_radius > 0.0 && self.tone_blur_radius.is_finite()) {
            return Err(DeformError::BadConfig(format!("tone_blur_radius {}", self.tone_blur_radius)));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return Err(DeformError::BadConfig(format!("init_jitter {}", self.init_jitter)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetShape {
    pub mask: Image,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformResult {
    pub final_params: ParamVector,
    pub loss_trace: Vec<f64>,
    pub target_iou_before: f64,
    pub target_iou_after: f64,
    /// The glyph had no contours; nothing was optimized.
    #[serde(default)]
    pub empty_glyph: bool,
}

fn check_dims(a: &Image, b: &Image) -> Result<(), DeformError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(DeformError::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    Ok(())
}

/// Half width of the box kernel for a blur radius: side = 2·round(r) + 1.
fn blur_half(radius: f64) -> usize {
    radius.round().max(0.0) as usize
}

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Edge-clamped box filter along x (`axis = 0`) or y (`axis = 1`).
fn box_1d(data: &[f64], w: usize, h: usize, half: usize, axis: usize) -> Vec<f64> {
    let side = (2 * half + 1) as f64;
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for k in -(half as isize)..=(half as isize) {
                let (sx, sy) = if axis == 0 {
                    (clamp_idx(x as isize + k, w), y)
                } else {
                    (x, clamp_idx(y as isize + k, h))
                };
                acc += data[sy * w + sx];
            }
            out[y * w + x] = acc / side;
        }
    }
    out
}

/// Adjoint of [`box_1d`].
fn box_1d_adjoint(data: &[f64], w: usize, h: usize, half: usize, axis: usize) -> Vec<f64> {
    let side = (2 * half + 1) as f64;
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let g = data[y * w + x] / side;
            for k in -(half as isize)..=(half as isize) {
                let (sx, sy) = if axis == 0 {
                    (clamp_idx(x as isize + k, w), y)
                } else {
                    (x, clamp_idx(y as isize + k, h))
                };
                out[sy * w + sx] += g;
            }
        }
    }
    out
}

fn box_blur(data: &[f64], w: usize, h: usize, half: usize) -> Vec<f64> {
    box_1d(&box_1d(data, w, h, half, 0), w, h, half, 1)
}

fn box_blur_adjoint(data: &[f64], w: usize, h: usize, half: usize) -> Vec<f64> {
    box_1d_adjoint(&box_1d_adjoint(data, w, h, half, 1), w, h, half, 0)
}

/// Mean squared difference of the box-blurred images (single channel).
pub fn tone_loss(img: &Image, reference: &Image, blur_radius: f64) -> Result<f64, DeformError> {
    check_dims(img, reference)?;
    let (w, h) = (img.width(), img.height());
    let half = blur_half(blur_radius);
    let a = box_blur(img.luminance().data(), w, h, half);
    let b = box_blur(reference.luminance().data(), w, h, half);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

fn tone_grad(img: &[f64], reference: &[f64], w: usize, h: usize, half: usize) -> (f64, Vec<f64>) {
    let a = box_blur(img, w, h, half);
    let b = box_blur(reference, w, h, half);
    let n = a.len() as f64;
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let scaled: Vec<f64> = diff.iter().map(|d| 2.0 * d / n).collect();
    (value, box_blur_adjoint(&scaled, w, h, half))
}

fn soft_iou_parts(img: &[f64], mask: &[f64]) -> (f64, f64) {
    img.iter()
        .zip(mask)
        .fold((0.0, 0.0), |(a, b), (&x, &m)| (a + x.min(m), b + x.max(m)))
}

/// `Σ min / Σ max`, taken as 0 when both images are empty.
pub fn soft_iou(img: &Image, mask: &Image) -> Result<f64, DeformError> {
    check_dims(img, mask)?;
    let (a, b) = soft_iou_parts(img.luminance().data(), mask.luminance().data());
    Ok(if b > 0.0 { a / b } else { 0.0 })
}

/// `1 − softIoU`; 1 when both images are empty.
pub fn target_loss(img: &Image, target: &TargetShape) -> Result<f64, DeformError> {
    Ok(1.0 - soft_iou(img, &target.mask)?)
}

fn target_grad(img: &[f64], mask: &[f64]) -> (f64, Vec<f64>) {
    let (a, b) = soft_iou_parts(img, mask);
    if b <= 0.0 {
        return (1.0, vec![0.0; img.len()]);
    }
    let b2 = b * b;
    let grad = img
        .iter()
        .zip(mask)
        .map(|(&x, &m)| {
            let da = if x < m { 1.0 } else { 0.0 };
            let db = if x > m { 1.0 } else { 0.0 };
            -(da * b - a * db) / b2
        })
        .collect();
    (1.0 - a / b, grad)
}

/// Mean squared displacement of the free coordinates (0 when none is free).
pub fn smoothness_penalty(params: &ParamVector, params0: &ParamVector, mask: &FreedomMask) -> Result<f64, DeformError> {
    for len in [params0.len(), mask.free.len()] {
        if len != params.len() {
            return Err(ParamError::LengthMismatch {
                expected: params.len(),
                actual: len,
            }
            .into());
        }
    }
    let n = mask.free_count();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = params
        .values
        .iter()
        .zip(&params0.values)
        .zip(&mask.free)
        .filter(|(_, f)| **f)
        .map(|((p, q), _)| (p - q) * (p - q))
        .sum();
    Ok(sum / n as f64)
}

/// The full deformation objective with everything except the parameters
/// held fixed.
pub struct DeformObjective<'a> {
    pub cfg: &'a DeformConfig,
    pub target: &'a TargetShape,
    pub reference: Vec<f64>,
    pub params0: &'a ParamVector,
    pub mask: &'a FreedomMask,
}

impl<'a> DeformObjective<'a> {
    pub fn new(
        cfg: &'a DeformConfig,
        target: &'a TargetShape,
        params0: &'a ParamVector,
        mask: &'a FreedomMask,
    ) -> Result<Self, DeformError> {
        let reference = rasterize(params0, &cfg.raster)?.image.into_data();
        Ok(Self {
            cfg,
            target,
            reference,
            params0,
            mask,
        })
    }

    pub fn value(&self, params: &ParamVector) -> Result<f64, DeformError> {
        Ok(self.value_and_gradient_inner(params, false)?.0)
    }

    pub fn value_and_gradient(&self, params: &ParamVector) -> Result<(f64, Vec<f64>), DeformError> {
        self.value_and_gradient_inner(params, true)
    }

    fn value_and_gradient_inner(&self, params: &ParamVector, want_grad: bool) -> Result<(f64, Vec<f64>), DeformError> {
        let cfg = self.cfg;
        let (w, h) = (cfg.raster.width, cfg.raster.height);
        let img = rasterize(params, &cfg.raster)?.image;
        let pixels = img.data();
        let (t_val, t_grad) = target_grad(pixels, self.target.mask.data());
        let (tone_val, tone_g) = tone_grad(pixels, &self.reference, w, h, blur_half(cfg.tone_blur_radius));
        let smooth_val = smoothness_penalty(params, self.params0, self.mask)?;
        let loss = cfg.w_target * t_val + cfg.w_tone * tone_val + cfg.w_smooth * smooth_val;
        if !want_grad {
            return Ok((loss, Vec::new()));
        }
        let dimg: Vec<f64> = t_grad
            .iter()
            .zip(&tone_g)
            .map(|(a, b)| cfg.w_target * a + cfg.w_tone * b)
            .collect();
        let mut grad = gradient_from_slice(params, &cfg.raster, &dimg)?.values;
        let n_free = self.mask.free_count();
        if n_free > 0 && cfg.w_smooth > 0.0 {
            for (i, g) in grad.iter_mut().enumerate() {
                if self.mask.free[i] {
                    *g += cfg.w_smooth * 2.0 * (params.values[i] - self.params0.values[i]) / n_free as f64;
                }
            }
        }
        Ok((loss, grad))
    }
}

pub fn optimize_deformation(
    outline: &GlyphOutline,
    policy: &RegionPolicy,
    target: &TargetShape,
    cfg: &DeformConfig,
) -> Result<DeformResult, DeformError> {
    cfg.validate()?;
    if target.mask.width() != cfg.raster.width || target.mask.height() != cfg.raster.height {
        return Err(DeformError::DimensionMismatch(
            target.mask.width(),
            target.mask.height(),
            cfg.raster.width,
            cfg.raster.height,
        ));
    }
    let params0 = to_params(outline);
    if outline.is_empty() {
        return Ok(DeformResult {
            final_params: params0,
            loss_trace: Vec::new(),
            target_iou_before: 0.0,
            target_iou_after: 0.0,
            empty_glyph: true,
        });
    }
    let mask = select_region(outline, policy)?;
    let objective = DeformObjective::new(cfg, target, &params0, &mask)?;
    let iou = |p: &ParamVector| -> Result<f64, DeformError> { soft_iou(&rasterize(p, &cfg.raster)?.image, &target.mask) };
    let target_iou_before = iou(&params0)?;

    let mut params = params0.clone();
    if cfg.init_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let jitter: Vec<f64> = (0..params.len())
            .map(|_| {
                // Box-Muller keeps this to rand's core API
                let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                let u2: f64 = rng.random();
                cfg.init_jitter * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        params = apply_update(&params, &mask, &jitter)?;
    }

    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let (loss, grad) = objective.value_and_gradient(&params)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let target_iou_after = iou(&params)?;
            return Err(DeformError::NonFiniteLoss {
                partial: Box::new(DeformResult {
                    final_params: params,
                    loss_trace: trace,
                    target_iou_before,
                    target_iou_after,
                    empty_glyph: false,
                }),
            });
        }
        trace.push(loss);
        let delta: Vec<f64> = grad.iter().map(|g| -cfg.step_size * g).collect();
        params = apply_update(&params, &mask, &delta)?;
    }
    let target_iou_after = iou(&params)?;
    Ok(DeformResult {
        final_params: params,
        loss_trace: trace,
        target_iou_before,
        target_iou_after,
        empty_glyph: false,
    })
}

/// Names accepted by [`build_target`].
pub const TARGET_LIBRARY: [&str; 5] = ["circle", "heart", "leaf", "diamond", "star"];

pub fn is_known_target(name: &str) -> bool {
    TARGET_LIBRARY.contains(&name)
}

/// Closed unit-scale outline of a library shape, centered near the origin,
/// y axis down.
fn library_contour(name: &str) -> Option<Vec<CubicSegment>> {
    let p = Point::new;
    let segs = match name {
        "circle" => {
            // four-arc cubic approximation
            let k = 0.552_284_749_830_793_4;
            vec![
                CubicSegment::new(p(1.0, 0.0), p(1.0, k), p(k, 1.0), p(0.0, 1.0)),
                CubicSegment::new(p(0.0, 1.0), p(-k, 1.0), p(-1.0, k), p(-1.0, 0.0)),
                CubicSegment::new(p(-1.0, 0.0), p(-1.0, -k), p(-k, -1.0), p(0.0, -1.0)),
                CubicSegment::new(p(0.0, -1.0), p(k, -1.0), p(1.0, -k), p(1.0, 0.0)),
            ]
        }
        "diamond" => {
            let c = [p(1.0, 0.0), p(0.0, 1.0), p(-1.0, 0.0), p(0.0, -1.0)];
            (0..4).map(|i| CubicSegment::line(c[i], c[(i + 1) % 4])).collect()
        }
        "heart" => vec![
            CubicSegment::new(p(0.0, 1.0), p(-0.6, 0.55), p(-1.1, 0.1), p(-1.0, -0.35)),
            CubicSegment::new(p(-1.0, -0.35), p(-0.9, -0.95), p(-0.15, -1.0), p(0.0, -0.45)),
            CubicSegment::new(p(0.0, -0.45), p(0.15, -1.0), p(0.9, -0.95), p(1.0, -0.35)),
            CubicSegment::new(p(1.0, -0.35), p(1.1, 0.1), p(0.6, 0.55), p(0.0, 1.0)),
        ],
        "leaf" => vec![
            CubicSegment::new(p(0.0, -1.0), p(0.75, -0.55), p(0.75, 0.55), p(0.0, 1.0)),
            CubicSegment::new(p(0.0, 1.0), p(-0.75, 0.55), p(-0.75, -0.55), p(0.0, -1.0)),
        ],
        "star" => {
            let pts: Vec<Point> = (0..10)
                .map(|i| {
                    let r = if i % 2 == 0 { 1.0 } else { 0.45 };
                    let a = -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::PI / 5.0;
                    p(r * a.cos(), r * a.sin())
                })
                .collect();
            (0..10).map(|i| CubicSegment::line(pts[i], pts[(i + 1) % 10])).collect()
        }
        _ => return None,
    };
    Some(segs)
}

fn polygon_centroid(poly: &[Point]) -> Point {
    let area = signed_area(poly);
    let mut c = Point::default();
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let cross = a.x * b.y - b.x * a.y;
        c = c + (a + b) * cross;
    }
    c * (1.0 / (6.0 * area))
}

/// Library shape as an outline with the given centroid and area (px²).
pub fn target_outline(name: &str, centroid: Point, area: f64) -> Result<GlyphOutline, DeformError> {
    let segs = library_contour(name).ok_or_else(|| DeformError::UnknownTarget(name.to_string()))?;
    let poly = flatten_contour(&segs, 64);
    let unit_area = signed_area(&poly).abs();
    let unit_centroid = polygon_centroid(&poly);
    let scale = (area.max(0.0) / unit_area).sqrt();
    let offset = centroid - unit_centroid * scale;
    let contour = Contour::new(
        segs.iter()
            .map(|s| {
                let m = |q: Point| q * scale + offset;
                CubicSegment::new(m(s.p0), m(s.p1), m(s.p2), m(s.p3))
            })
            .collect(),
    );
    Ok(GlyphOutline {
        contours: vec![contour],
        em_size_px: 0.0,
        advance_px: 0.0,
    })
}

/// Soft silhouette of a library shape with the coverage centroid and total
/// coverage of `glyph_render`, rasterized with `raster`.
pub fn build_target(name: &str, glyph_render: &Image, raster: &RasterConfig) -> Result<TargetShape, DeformError> {
    let lum = glyph_render.luminance();
    let total = lum.sum();
    let (w, h) = (lum.width(), lum.height());
    let centroid = if total > 0.0 {
        let mut c = Point::default();
        for y in 0..h {
            for x in 0..w {
                c = c + Point::new(x as f64 + 0.5, y as f64 + 0.5) * lum.get(x, y, 0);
            }
        }
        c * (1.0 / total)
    } else {
        Point::new(w as f64 / 2.0, h as f64 / 2.0)
    };
    let area = if total > 0.0 { total } else { (w * h) as f64 / 4.0 };
    let outline = target_outline(name, centroid, area)?;
    let mask = rasterize(&to_params(&outline), raster)?.image;
    Ok(TargetShape {
        mask,
        name: name.to_string(),
    })
}

/// Path data for one contour: `M x y C x1 y1, x2 y2, x3 y3 … Z`, six decimals.
pub fn contour_path_data(segments: &[CubicSegment]) -> String {
    let mut d = String::new();
    if let Some(first) = segments.first() {
        write!(d, "M {:.6} {:.6}", first.p0.x, first.p0.y).expect("write to string");
        for s in segments {
            write!(
                d,
                " C {:.6} {:.6}, {:.6} {:.6}, {:.6} {:.6}",
                s.p1.x, s.p1.y, s.p2.x, s.p2.y, s.p3.x, s.p3.y
            )
            .expect("write to string");
        }
        d.push_str(" Z");
    }
    d
}

/// Standalone SVG document, one even-odd `path` per contour.
pub fn outline_to_svg(outline: &GlyphOutline, width: usize, height: usize) -> String {
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    );
    for c in &outline.contours {
        writeln!(svg, "  <path fill-rule=\"evenodd\" d=\"{}\"/>", contour_path_data(&c.segments)).expect("write to string");
    }
    svg.push_str("</svg>\n");
    svg
}
