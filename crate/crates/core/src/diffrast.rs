//! Differentiable rasterization of filled cubic outlines.
//!
//! Curves are flattened to polylines whose vertices are fixed Bernstein
//! combinations of the control points. Each sample point gets a signed
//! distance `d` (distance to the nearest polyline edge, negative inside by the
//! even-odd rule) and coverage `σ(-d / τ)`; a pixel averages its
//! `supersample²` samples. The backward pass differentiates the same chain,
//! holding the inside/outside sign and the identity of the nearest edge fixed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{bernstein, sample_segment, Point};
use crate::image::Image;
use crate::shapeparam::ParamVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("invalid raster config: {0}")]
    BadConfig(String),
    #[error("gradient image is {got_w}x{got_h}x{got_c}, expected {want_w}x{want_h}x1")]
    DimensionMismatch {
        want_w: usize,
        want_h: usize,
        got_w: usize,
        got_h: usize,
        got_c: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    pub width: usize,
    pub height: usize,
    /// Logistic smoothing width in pixels.
    pub smoothing_tau: f64,
    /// Polyline samples per cubic.
    pub subdiv: usize,
    /// Samples per pixel along each axis.
    pub supersample: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            smoothing_tau: 1.0,
            subdiv: 16,
            supersample: 2,
        }
    }
}

impl RasterConfig {
    pub fn with_size(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        if self.width == 0 || self.height == 0 {
            return Err(RasterError::BadConfig("width and height must be positive".into()));
        }
        if !(self.smoothing_tau > 0.0 && self.smoothing_tau.is_finite()) {
            return Err(RasterError::BadConfig(format!("smoothing_tau {}", self.smoothing_tau)));
        }
        if self.subdiv < 2 {
            return Err(RasterError::BadConfig(format!("subdiv {} < 2", self.subdiv)));
        }
        if self.supersample < 1 {
            return Err(RasterError::BadConfig("supersample must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGradient {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: Image,
    /// Set when there was no geometry to draw; the image is then all zeros.
    pub empty_shape: bool,
}

/// Samples each cubic of `params` at `t = k / subdiv`, `k = 0..=subdiv`.
pub fn flatten(params: &ParamVector, subdiv: usize) -> Vec<Vec<Point>> {
    (0..params.segment_count())
        .map(|s| sample_segment(&params.segment(s), subdiv))
        .collect()
}

/// Polyline edges in structure-of-arrays form for the inner distance loop.
///
/// Vertices are numbered `segment * subdiv + k`, `k = 0..subdiv`. Vertex 0 of
/// a segment is the contour joint, placed at the mean of the segment's `p0`
/// and the previous segment's `p3` so each closed contour is one polygon even
/// while the two copies are perturbed independently.
struct Edges {
    ax: Vec<f64>,
    ay: Vec<f64>,
    ex: Vec<f64>,
    ey: Vec<f64>,
    by: Vec<f64>,
    inv_len2: Vec<f64>,
    start_vertex: Vec<usize>,
    end_vertex: Vec<usize>,
}

/// Segment preceding `s` within its contour, cyclically.
fn previous_segments(params: &ParamVector) -> Vec<usize> {
    let mut prev = Vec::with_capacity(params.segment_count());
    let mut base = 0;
    for &n in &params.contour_segments {
        for k in 0..n {
            prev.push(base + (k + n - 1) % n);
        }
        base += n;
    }
    prev
}

fn polygon_vertices(params: &ParamVector, subdiv: usize) -> Vec<Point> {
    let prev = previous_segments(params);
    let mut out = Vec::with_capacity(params.segment_count() * subdiv);
    for (s, samples) in flatten(params, subdiv).into_iter().enumerate() {
        let p3 = params.segment(prev[s]).p3;
        out.push((samples[0] + p3) * 0.5);
        out.extend_from_slice(&samples[1..subdiv]);
    }
    out
}

impl Edges {
    fn build(params: &ParamVector, subdiv: usize) -> Edges {
        let verts = polygon_vertices(params, subdiv);
        let n = verts.len();
        let mut e = Edges {
            ax: Vec::with_capacity(n),
            ay: Vec::with_capacity(n),
            ex: Vec::with_capacity(n),
            ey: Vec::with_capacity(n),
            by: Vec::with_capacity(n),
            inv_len2: Vec::with_capacity(n),
            start_vertex: Vec::with_capacity(n),
            end_vertex: Vec::with_capacity(n),
        };
        let mut base = 0;
        for &segs in &params.contour_segments {
            let count = segs * subdiv;
            for k in 0..count {
                let (ia, ib) = (base + k, base + (k + 1) % count);
                let (a, b) = (verts[ia], verts[ib]);
                let d = b - a;
                let len2 = d.dot(d);
                e.ax.push(a.x);
                e.ay.push(a.y);
                e.ex.push(d.x);
                e.ey.push(d.y);
                e.by.push(b.y);
                e.inv_len2.push(if len2 > 0.0 { 1.0 / len2 } else { 0.0 });
                e.start_vertex.push(ia);
                e.end_vertex.push(ib);
            }
            base += count;
        }
        e
    }

    fn len(&self) -> usize {
        self.ax.len()
    }

    /// Nearest edge, its projection parameter, squared distance, and
    /// even-odd inside flag for sample `(sx, sy)`.
    #[inline]
    fn query(&self, sx: f64, sy: f64) -> (usize, f64, f64, bool) {
        let mut best = f64::INFINITY;
        let mut best_i = 0;
        let mut best_t = 0.0;
        let mut inside = false;
        for i in 0..self.len() {
            let (ax, ay, ex, ey) = (self.ax[i], self.ay[i], self.ex[i], self.ey[i]);
            let dx = sx - ax;
            let dy = sy - ay;
            let t = ((dx * ex + dy * ey) * self.inv_len2[i]).clamp(0.0, 1.0);
            let qx = dx - t * ex;
            let qy = dy - t * ey;
            let d2 = qx * qx + qy * qy;
            if d2 < best {
                best = d2;
                best_i = i;
                best_t = t;
            }
            let by = self.by[i];
            if (ay > sy) != (by > sy) {
                let x = ax + (sy - ay) / (by - ay) * ex;
                if sx < x {
                    inside = !inside;
                }
            }
        }
        (best_i, best_t, best, inside)
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn sample_offset(i: usize, supersample: usize) -> f64 {
    (i as f64 + 0.5) / supersample as f64
}

pub fn rasterize(params: &ParamVector, cfg: &RasterConfig) -> Result<Rendered, RasterError> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    if params.segment_count() == 0 {
        return Ok(Rendered {
            image: Image::zeros(w, h, 1),
            empty_shape: true,
        });
    }
    let edges = Edges::build(params, cfg.subdiv);
    let ss = cfg.supersample;
    let inv_samples = 1.0 / (ss * ss) as f64;
    let inv_tau = 1.0 / cfg.smoothing_tau;
    let image = Image::from_fn_clamped(w, h, 1, |px, py, _| {
        let mut acc = 0.0;
        for j in 0..ss {
            let sy = py as f64 + sample_offset(j, ss);
            for i in 0..ss {
                let sx = px as f64 + sample_offset(i, ss);
                let (_, _, d2, inside) = edges.query(sx, sy);
                let d = if inside { -d2.sqrt() } else { d2.sqrt() };
                acc += logistic(-d * inv_tau);
            }
        }
        acc * inv_samples
    });
    Ok(Rendered {
        image,
        empty_shape: false,
    })
}

/// Gradient of `L` with respect to every parameter, given `dL/dimage`.
pub fn loss_gradient(params: &ParamVector, cfg: &RasterConfig, dl_dimage: &Image) -> Result<ParamGradient, RasterError> {
    cfg.validate()?;
    if dl_dimage.width() != cfg.width || dl_dimage.height() != cfg.height || dl_dimage.channels() != 1 {
        return Err(RasterError::DimensionMismatch {
            want_w: cfg.width,
            want_h: cfg.height,
            got_w: dl_dimage.width(),
            got_h: dl_dimage.height(),
            got_c: dl_dimage.channels(),
        });
    }
    gradient_from_slice(params, cfg, dl_dimage.data())
}

/// Same as [`loss_gradient`] but takes the upstream gradient as a raw
/// row-major slice, which may hold values outside `[0, 1]`.
pub fn gradient_from_slice(params: &ParamVector, cfg: &RasterConfig, dl: &[f64]) -> Result<ParamGradient, RasterError> {
    cfg.validate()?;
    if dl.len() != cfg.width * cfg.height {
        return Err(RasterError::DimensionMismatch {
            want_w: cfg.width,
            want_h: cfg.height,
            got_w: dl.len(),
            got_h: 1,
            got_c: 1,
        });
    }
    let mut grad = vec![0.0; params.len()];
    if params.segment_count() == 0 {
        return Ok(ParamGradient { values: grad });
    }
    let subdiv = cfg.subdiv;
    let edges = Edges::build(params, subdiv);
    let ss = cfg.supersample;
    let inv_samples = 1.0 / (ss * ss) as f64;
    let inv_tau = 1.0 / cfg.smoothing_tau;

    // dL/d(vertex) for every polyline vertex
    let mut vgrad = vec![Point::default(); params.segment_count() * subdiv];
    for py in 0..cfg.height {
        for px in 0..cfg.width {
            let g = dl[py * cfg.width + px];
            if g == 0.0 {
                continue;
            }
            for j in 0..ss {
                let sy = py as f64 + sample_offset(j, ss);
                for i in 0..ss {
                    let sx = px as f64 + sample_offset(i, ss);
                    let (e, t, d2, inside) = edges.query(sx, sy);
                    let dist = d2.sqrt();
                    if dist == 0.0 {
                        continue;
                    }
                    let sign = if inside { -1.0 } else { 1.0 };
                    let cov = logistic(-sign * dist * inv_tau);
                    // dL/d(dist) through coverage = σ(-sign·dist/τ)
                    let coef = g * inv_samples * cov * (1.0 - cov) * (-sign * inv_tau);
                    let qx = sx - (edges.ax[e] + t * edges.ex[e]);
                    let qy = sy - (edges.ay[e] + t * edges.ey[e]);
                    let n = Point::new(qx / dist, qy / dist);
                    // d(dist)/da = -n (1 - t), d(dist)/db = -n t
                    let (va, vb) = (edges.start_vertex[e], edges.end_vertex[e]);
                    vgrad[va] = vgrad[va] + n * (-coef * (1.0 - t));
                    vgrad[vb] = vgrad[vb] + n * (-coef * t);
                }
            }
        }
    }

    let weights: Vec<[f64; 4]> = (0..subdiv).map(|k| bernstein(k as f64 / subdiv as f64)).collect();
    let prev = previous_segments(params);
    for s in 0..params.segment_count() {
        let joint = vgrad[s * subdiv] * 0.5;
        grad[8 * s] += joint.x;
        grad[8 * s + 1] += joint.y;
        grad[8 * prev[s] + 6] += joint.x;
        grad[8 * prev[s] + 7] += joint.y;
        for (k, w) in weights.iter().enumerate().skip(1) {
            let vg = vgrad[s * subdiv + k];
            for (j, wj) in w.iter().enumerate() {
                grad[8 * s + 2 * j] += wj * vg.x;
                grad[8 * s + 2 * j + 1] += wj * vg.y;
            }
        }
    }
    Ok(ParamGradient { values: grad })
}
