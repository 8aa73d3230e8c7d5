//! Flat parameterization of a glyph outline and region selection.
//!
//! A [`ParamVector`] stores the `(x, y)` pairs of `p0..p3` for every segment,
//! eight reals per segment in contour order. The endpoint shared by two
//! consecutive segments therefore appears twice; [`apply_update`] keeps both
//! copies equal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fontparse::{Contour, GlyphOutline};
use crate::geom::{CubicSegment, Point};

pub const DEFAULT_DEFORM_RATIO: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("bad region policy: {0}")]
    BadPolicy(String),
    #[error("freedom mask flags disagree at coordinate {0}")]
    InconsistentMask(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    /// Number of segments in each contour, in order.
    pub contour_segments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreedomMask {
    pub free: Vec<bool>,
}

impl FreedomMask {
    pub fn all(len: usize, free: bool) -> Self {
        Self { free: vec![free; len] }
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|f| **f).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    All,
    ContourIndices,
    SaliencyRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPolicy {
    pub mode: RegionMode,
    #[serde(default)]
    pub contour_indices: Vec<usize>,
    #[serde(default = "default_ratio")]
    pub deform_ratio: f64,
}

fn default_ratio() -> f64 {
    DEFAULT_DEFORM_RATIO
}

impl Default for RegionPolicy {
    fn default() -> Self {
        Self {
            mode: RegionMode::SaliencyRatio,
            contour_indices: Vec::new(),
            deform_ratio: DEFAULT_DEFORM_RATIO,
        }
    }
}

impl RegionPolicy {
    pub fn all() -> Self {
        Self {
            mode: RegionMode::All,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_contours: Option<usize>) -> Result<(), ParamError> {
        if !(0.0..=1.0).contains(&self.deform_ratio) {
            return Err(ParamError::BadPolicy(format!(
                "deform_ratio {} outside [0, 1]",
                self.deform_ratio
            )));
        }
        if let (RegionMode::ContourIndices, Some(n)) = (self.mode, n_contours) {
            if let Some(bad) = self.contour_indices.iter().find(|&&i| i >= n) {
                return Err(ParamError::BadPolicy(format!("contour index {bad} out of range (0..{n})")));
            }
        }
        Ok(())
    }
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment_count(&self) -> usize {
        self.values.len() / 8
    }

    pub fn segment(&self, index: usize) -> CubicSegment {
        let v = &self.values[8 * index..8 * index + 8];
        CubicSegment::new(
            Point::new(v[0], v[1]),
            Point::new(v[2], v[3]),
            Point::new(v[4], v[5]),
            Point::new(v[6], v[7]),
        )
    }

    /// Segments grouped by contour.
    pub fn contours(&self) -> Vec<Vec<CubicSegment>> {
        let mut out = Vec::with_capacity(self.contour_segments.len());
        let mut base = 0;
        for &n in &self.contour_segments {
            out.push((base..base + n).map(|i| self.segment(i)).collect());
            base += n;
        }
        out
    }

    /// Index pairs `(end of segment a, start of segment b)` of the shared
    /// endpoint coordinates, x and y separately.
    pub fn joints(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.values.len() / 4);
        let mut base = 0;
        for &n in &self.contour_segments {
            for k in 0..n {
                let a = base + k;
                let b = base + (k + 1) % n;
                out.push((8 * a + 6, 8 * b));
                out.push((8 * a + 7, 8 * b + 1));
            }
            base += n;
        }
        out
    }

    /// True when every shared endpoint has bit-identical copies.
    pub fn is_closed(&self) -> bool {
        self.joints().iter().all(|&(a, b)| self.values[a] == self.values[b])
    }
}

pub fn to_params(outline: &GlyphOutline) -> ParamVector {
    let mut values = Vec::with_capacity(outline.segment_count() * 8);
    for c in &outline.contours {
        for s in &c.segments {
            for p in s.points() {
                values.push(p.x);
                values.push(p.y);
            }
        }
    }
    ParamVector {
        values,
        contour_segments: outline.contours.iter().map(|c| c.segments.len()).collect(),
    }
}

/// Rebuilds an outline from `params`, keeping the metrics of `like`.
pub fn from_params(params: &ParamVector, like: &GlyphOutline) -> GlyphOutline {
    GlyphOutline {
        contours: params.contours().into_iter().map(Contour::new).collect(),
        em_size_px: like.em_size_px,
        advance_px: like.advance_px,
    }
}

/// Unique control points: `p0, p1, p2` of every segment (a segment's `p3` is
/// the next segment's `p0`). Returns `(contour, value index of x)`.
fn control_points(params: &ParamVector) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(params.segment_count() * 3);
    let mut seg = 0;
    for (ci, &n) in params.contour_segments.iter().enumerate() {
        for _ in 0..n {
            for k in 0..3 {
                out.push((ci, 8 * seg + 2 * k));
            }
            seg += 1;
        }
    }
    out
}

pub fn select_region(outline: &GlyphOutline, policy: &RegionPolicy) -> Result<FreedomMask, ParamError> {
    policy.validate(Some(outline.contours.len()))?;
    let params = to_params(outline);
    let points = control_points(&params);
    let chosen: Vec<bool> = match policy.mode {
        RegionMode::All => vec![true; points.len()],
        RegionMode::ContourIndices => points
            .iter()
            .map(|(ci, _)| policy.contour_indices.contains(ci))
            .collect(),
        RegionMode::SaliencyRatio => {
            let n = points.len();
            let xy = |i: usize| Point::new(params.values[points[i].1], params.values[points[i].1 + 1]);
            let centroid = if n == 0 {
                Point::default()
            } else {
                (0..n).fold(Point::default(), |acc, i| acc + xy(i)) * (1.0 / n as f64)
            };
            let dist: Vec<f64> = (0..n).map(|i| xy(i).distance(centroid)).collect();
            let mut order: Vec<usize> = (0..n).collect();
            // descending distance, ties to the lower index
            order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            // the epsilon keeps ratios such as 0.1 * 30 from rounding up
            let k = ((policy.deform_ratio * n as f64) - 1e-9).ceil().max(0.0) as usize;
            let mut chosen = vec![false; n];
            for &i in order.iter().take(k.min(n)) {
                chosen[i] = true;
            }
            chosen
        }
    };

    let mut free = vec![false; params.len()];
    for (flag, &(_, xi)) in chosen.iter().zip(&points) {
        free[xi] = *flag;
        free[xi + 1] = *flag;
    }
    // the p3 copy follows the p0 it duplicates
    for (a, b) in params.joints() {
        free[a] = free[b];
    }
    Ok(FreedomMask { free })
}

/// Adds `delta` on free coordinates and re-synchronizes duplicated endpoints
/// by averaging their two updated copies.
pub fn apply_update(params: &ParamVector, mask: &FreedomMask, delta: &[f64]) -> Result<ParamVector, ParamError> {
    let n = params.len();
    for len in [mask.free.len(), delta.len()] {
        if len != n {
            return Err(ParamError::LengthMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    let joints = params.joints();
    for &(a, b) in &joints {
        if mask.free[a] != mask.free[b] {
            return Err(ParamError::InconsistentMask(a));
        }
    }
    let mut values: Vec<f64> = params
        .values
        .iter()
        .zip(&mask.free)
        .zip(delta)
        .map(|((&v, &f), &d)| if f { v + d } else { v })
        .collect();
    for &(a, b) in &joints {
        if mask.free[a] {
            let avg = 0.5 * (values[a] + values[b]);
            values[a] = avg;
            values[b] = avg;
        }
    }
    Ok(ParamVector {
        values,
        contour_segments: params.contour_segments.clone(),
    })
}
