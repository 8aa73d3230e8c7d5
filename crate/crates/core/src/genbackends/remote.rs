//! JSON-over-HTTP clients for remote generative services.
//!
//! | endpoint        | request fields                                   | reply                |
//! |-----------------|--------------------------------------------------|----------------------|
//! | `/v1/stylize`   | `prompt`, `depth_png_b64`, `seed`, `strength`    | `{"image_png_b64"}`  |
//! | `/v1/texturize` | `prompt`, `control_png_b64`, `seed`              | `{"image_png_b64"}`  |
//! | `/v1/score`     | `image_png_b64`, `mask_png_b64`                  | `{"legibility"}`     |
//! | `/v1/plan`      | `user_text`                                      | directives document  |
//!
//! Error replies carry `{"error": str}`. 5xx and transport failures are
//! retried once.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Value};

use super::{BackendError, ScoreBackend, ScoreReport, StyleBackend, StylizeRequest, TexturizeRequest};
use crate::image::Image;

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
pub const TOTAL_TIMEOUT: Duration = Duration::from_secs(120);
const MAX_REPLY_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
    retries: usize,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_timeouts(base_url, CONNECT_TIMEOUT, TOTAL_TIMEOUT)
    }

    pub fn with_timeouts(base_url: impl Into<String>, connect: Duration, total: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_connect(Some(connect))
            .timeout_global(Some(total))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            retries: 1,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// POSTs `body` to `path` and returns the parsed JSON object of a 2xx
    /// reply.
    pub fn post_json(&self, path: &str, body: &Value) -> Result<serde_json::Map<String, Value>, BackendError> {
        match self.post_value(path, body)? {
            Value::Object(map) => Ok(map),
            other => Err(BackendError::MalformedReply(format!("{path}: expected a JSON object, got {other}"))),
        }
    }

    /// Like [`RemoteBackend::post_json`] but accepts any JSON document.
    pub fn post_value(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let payload = serde_json::to_vec(body).map_err(|e| BackendError::BadRequest(e.to_string()))?;
        let mut attempt = 0;
        loop {
            match self.post_once(path, &payload) {
                Err(BackendError::Unavailable { retryable: true, .. }) if attempt < self.retries => attempt += 1,
                other => return other,
            }
        }
    }

    fn post_once(&self, path: &str, payload: &[u8]) -> Result<Value, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let mut resp = self
            .agent
            .post(&url)
            .content_type("application/json")
            .send(payload)
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(MAX_REPLY_BYTES)
            .read_to_vec()
            .map_err(transport_error)?;
        if !(200..300).contains(&status) {
            let detail = serde_json::from_slice::<Value>(&bytes)
                .ok()
                .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
                .unwrap_or_else(|| String::from_utf8_lossy(&bytes).chars().take(200).collect());
            return Err(BackendError::Unavailable {
                message: format!("{url} returned {status}: {detail}"),
                retryable: status >= 500,
            });
        }
        serde_json::from_slice::<Value>(&bytes).map_err(|e| BackendError::MalformedReply(format!("{url}: {e}")))
    }

    fn image_reply(&self, path: &str, body: &Value, width: usize, height: usize) -> Result<Image, BackendError> {
        let reply = self.post_json(path, body)?;
        let b64 = reply
            .get("image_png_b64")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::MalformedReply(format!("{path}: missing string field image_png_b64")))?;
        let img = decode_png_b64(b64).map_err(|e| BackendError::MalformedReply(format!("{path}: {e}")))?;
        if img.width() != width || img.height() != height {
            return Err(BackendError::MalformedReply(format!(
                "{path}: reply is {}x{}, request was {width}x{height}",
                img.width(),
                img.height()
            )));
        }
        Ok(to_rgb(img))
    }
}

fn transport_error(e: ureq::Error) -> BackendError {
    let retryable = matches!(
        e,
        ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed | ureq::Error::Io(_) | ureq::Error::HostNotFound
    );
    BackendError::Unavailable {
        message: e.to_string(),
        retryable,
    }
}

pub fn encode_png_b64(img: &Image) -> Result<String, BackendError> {
    let png = img.to_png().map_err(|e| BackendError::BadRequest(e.to_string()))?;
    Ok(STANDARD.encode(png))
}

pub fn decode_png_b64(b64: &str) -> Result<Image, String> {
    let bytes = STANDARD.decode(b64.trim()).map_err(|e| format!("bad base64: {e}"))?;
    Image::from_png(&bytes).map_err(|e| format!("bad png: {e}"))
}

fn to_rgb(img: Image) -> Image {
    if img.channels() == 3 {
        return img;
    }
    Image::from_fn_clamped(img.width(), img.height(), 3, |x, y, _| img.get(x, y, 0))
}

impl StyleBackend for RemoteBackend {
    fn stylize(&self, req: &StylizeRequest) -> Result<Image, BackendError> {
        req.validate()?;
        let body = json!({
            "prompt": req.prompt,
            "depth_png_b64": encode_png_b64(&req.depth)?,
            "seed": req.seed,
            "strength": req.strength,
        });
        self.image_reply("/v1/stylize", &body, req.depth.width(), req.depth.height())
    }

    fn texturize(&self, req: &TexturizeRequest) -> Result<Image, BackendError> {
        req.validate()?;
        let body = json!({
            "prompt": req.prompt,
            "control_png_b64": encode_png_b64(&req.control)?,
            "seed": req.seed,
        });
        self.image_reply("/v1/texturize", &body, req.control.width(), req.control.height())
    }
}

impl ScoreBackend for RemoteBackend {
    fn score(&self, candidate: &Image, original_mask: &Image, threshold: f64) -> Result<ScoreReport, BackendError> {
        let body = json!({
            "image_png_b64": encode_png_b64(candidate)?,
            "mask_png_b64": encode_png_b64(original_mask)?,
        });
        let reply = self.post_json("/v1/score", &body)?;
        let legibility = reply
            .get("legibility")
            .and_then(Value::as_f64)
            .filter(|v| (0.0..=1.0).contains(v))
            .ok_or_else(|| BackendError::MalformedReply("/v1/score: legibility must be a number in [0, 1]".into()))?;
        Ok(ScoreReport::new(legibility, threshold))
    }
}
