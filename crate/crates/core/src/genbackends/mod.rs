//! Stylization and texturing backends, their condition maps, and the
//! legibility scorer used to rank stylized candidates.

mod conditions;
pub mod mock;
pub mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conditions::{control_map, depth_map};
pub use mock::MockBackend;
pub use remote::RemoteBackend;

use crate::image::Image;

pub const DEFAULT_THRESHOLD: f64 = 0.55;
pub const DEFAULT_STRENGTH: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {message}")]
    Unavailable { message: String, retryable: bool },
    #[error("malformed backend reply: {0}")]
    MalformedReply(String),
    #[error("invalid backend request: {0}")]
    BadRequest(String),
    #[error("dimension mismatch: candidate {cand_w}x{cand_h}, mask {mask_w}x{mask_h}")]
    DimensionMismatch {
        cand_w: usize,
        cand_h: usize,
        mask_w: usize,
        mask_h: usize,
    },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Unavailable { retryable: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StylizeRequest {
    pub prompt: String,
    pub depth: Image,
    pub seed: u64,
    pub strength: f64,
}

impl StylizeRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(BackendError::BadRequest(format!("strength {} outside [0, 1]", self.strength)));
        }
        if self.depth.channels() != 1 {
            return Err(BackendError::BadRequest("depth must have one channel".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TexturizeRequest {
    pub prompt: String,
    pub control: Image,
    pub seed: u64,
}

impl TexturizeRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.control.channels() != 1 {
            return Err(BackendError::BadRequest("control must have one channel".into()));
        }
        if self.control.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(BackendError::BadRequest("control values must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub legibility: f64,
    pub passed: bool,
    pub threshold: f64,
}

impl ScoreReport {
    pub fn new(legibility: f64, threshold: f64) -> Self {
        Self {
            legibility,
            passed: legibility >= threshold,
            threshold,
        }
    }
}

pub trait StyleBackend: Send + Sync {
    fn stylize(&self, req: &StylizeRequest) -> Result<Image, BackendError>;
    fn texturize(&self, req: &TexturizeRequest) -> Result<Image, BackendError>;
}

pub trait ScoreBackend: Send + Sync {
    fn score(&self, candidate: &Image, original_mask: &Image, threshold: f64) -> Result<ScoreReport, BackendError>;
}

/// Local scorer wrapping [`legibility_score`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LegibilityScorer;

impl ScoreBackend for LegibilityScorer {
    fn score(&self, candidate: &Image, original_mask: &Image, threshold: f64) -> Result<ScoreReport, BackendError> {
        legibility_score(candidate, original_mask, threshold)
    }
}

impl<T: StyleBackend + ?Sized> StyleBackend for std::sync::Arc<T> {
    fn stylize(&self, req: &StylizeRequest) -> Result<Image, BackendError> {
        (**self).stylize(req)
    }
    fn texturize(&self, req: &TexturizeRequest) -> Result<Image, BackendError> {
        (**self).texturize(req)
    }
}

impl<T: ScoreBackend + ?Sized> ScoreBackend for std::sync::Arc<T> {
    fn score(&self, candidate: &Image, original_mask: &Image, threshold: f64) -> Result<ScoreReport, BackendError> {
        (**self).score(candidate, original_mask, threshold)
    }
}

/// IoU between the candidate's luminance thresholded above its own mean and
/// the mask thresholded at 0.5. Two empty sets score 1.
pub fn legibility_score(candidate: &Image, original_mask: &Image, threshold: f64) -> Result<ScoreReport, BackendError> {
    if candidate.width() != original_mask.width() || candidate.height() != original_mask.height() {
        return Err(BackendError::DimensionMismatch {
            cand_w: candidate.width(),
            cand_h: candidate.height(),
            mask_w: original_mask.width(),
            mask_h: original_mask.height(),
        });
    }
    if original_mask.channels() != 1 {
        return Err(BackendError::BadRequest("mask must have one channel".into()));
    }
    let lum = candidate.luminance();
    let mean = lum.mean();
    let (mut inter, mut union) = (0usize, 0usize);
    for (&l, &m) in lum.data().iter().zip(original_mask.data()) {
        let a = l > mean;
        let b = m >= 0.5;
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    let legibility = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok(ScoreReport::new(legibility, threshold))
}
