//! HTTP API over the job pipeline.
//!
//! | route                                   | purpose                              |
//! |-----------------------------------------|--------------------------------------|
//! | `POST /api/jobs`                        | start a job, 202 `{"job_id"}`        |
//! | `GET /api/jobs/{id}`                    | job manifest plus artifact URLs      |
//! | `GET /api/jobs/{id}/artifacts/{*path}`  | one artifact file                    |
//! | `POST /api/deform`                      | synchronous glyph deformation        |
//! | `POST /api/texturize`                   | synchronous texturing of an image    |
//! | `GET /api/health`                       | `{"status":"ok"}`                    |

use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde_json::{json, Map, Value};
use wordart_core::genbackends::{control_map, BackendError, TexturizeRequest};
use wordart_core::image::Image;
use wordart_core::orchestrator::{
    deform_glyph, is_valid_job_id, job_dir, load_job, new_job_id, prepare_glyph, resolve_artifact, resolve_font,
    sha256_hex, BackendSpec, Backends, JobRecord, JobRequest, OrchestratorError, Pipeline, PipelineOptions, MANIFEST,
};
use wordart_core::planner::{apply_overrides, Directives, FieldViolation, PlanError};

pub struct AppState {
    options: PipelineOptions,
    default_backend: String,
    backends: Option<Backends>,
    ids: Mutex<StdRng>,
}

impl AppState {
    pub fn new(options: PipelineOptions, default_backend: &str) -> Self {
        Self {
            options,
            default_backend: default_backend.to_string(),
            backends: None,
            ids: Mutex::new(StdRng::from_os_rng()),
        }
    }

    /// Job ids drawn from a seeded generator.
    pub fn with_id_seed(mut self, seed: u64) -> Self {
        self.ids = Mutex::new(StdRng::seed_from_u64(seed));
        self
    }

    /// Serves every request with `backends` regardless of its
    /// `backend_config`.
    pub fn with_backends(mut self, backends: Backends) -> Self {
        self.backends = Some(backends);
        self
    }

    fn pipeline(&self) -> Pipeline {
        let p = Pipeline::new(self.options.clone());
        match &self.backends {
            Some(b) => p.with_backends(b.clone()),
            None => p,
        }
    }

    fn backends_for(&self, backend_config: &str) -> Result<Backends, ApiError> {
        if let Some(b) = &self.backends {
            return Ok(b.clone());
        }
        let spec = BackendSpec::parse(backend_config).map_err(|m| ApiError::bad_request(m, Vec::new()))?;
        Ok(Backends::from_spec(&spec))
    }

    fn next_id(&self) -> String {
        new_job_id(&mut *self.ids.lock().expect("id generator"))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/jobs", post(create_job))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/artifacts/{*path}", get(get_artifact))
        .route("/api/deform", post(deform))
        .route("/api/texturize", post(texturize))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn bad_request(message: impl Into<String>, violations: Vec<FieldViolation>) -> Self {
        let mut e = Self::new(StatusCode::BAD_REQUEST, message);
        if !violations.is_empty() {
            e.body["violations"] = serde_json::to_value(violations).expect("violations serialize");
        }
        e
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::InvalidRequest(v) => {
                let msg = OrchestratorError::InvalidRequest(v.clone()).to_string();
                ApiError::bad_request(msg, v)
            }
            OrchestratorError::UnmappableCharacter(c) => {
                let mut err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string());
                err.body["character"] = json!(c.to_string());
                err
            }
            OrchestratorError::Font(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            OrchestratorError::NotFound(_) => ApiError::not_found(e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<PlanError> for ApiError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::SchemaViolation(v) => {
                let msg = PlanError::SchemaViolation(v.clone()).to_string();
                ApiError::bad_request(msg, v)
            }
            other => ApiError::bad_request(other.to_string(), Vec::new()),
        }
    }
}

fn parse_object(body: &[u8]) -> Result<Map<String, Value>, ApiError> {
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ApiError::bad_request("expected a JSON object", Vec::new())),
        Err(e) => Err(ApiError::bad_request(format!("invalid JSON: {e}"), Vec::new())),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_job(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let mut obj = parse_object(&body)?;
    obj.entry("backend_config")
        .or_insert_with(|| Value::String(state.default_backend.clone()));
    let req = JobRequest::from_json(&Value::Object(obj))?;
    let id = state.next_id();
    let pipeline = state.pipeline();
    let submitted = {
        let (pipeline, id) = (pipeline.clone(), id.clone());
        blocking(move || pipeline.submit(req, &id)).await??
    };
    let job = id.clone();
    std::thread::spawn(move || {
        if let Err(e) = pipeline.run(submitted) {
            eprintln!("job {job}: {e}");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": id }))).into_response())
}

/// Manifest JSON plus `artifact_urls`, one per artifact path.
pub fn job_view(record: &JobRecord) -> Value {
    let mut v = serde_json::to_value(record).expect("job record serializes");
    let urls: Map<String, Value> = record
        .artifacts()
        .into_iter()
        .map(|a| (a.path.clone(), Value::String(format!("/api/jobs/{}/artifacts/{}", record.id, a.path))))
        .collect();
    v["artifact_urls"] = Value::Object(urls);
    v
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    if !is_valid_job_id(&id) {
        return Err(ApiError::not_found(format!("unknown job {id}")));
    }
    let root = state.options.job_root.clone();
    let record = blocking(move || load_job(&root, &id)).await??;
    Ok(Json(job_view(&record)))
}

fn content_type(path: &str) -> &'static str {
    match path.rsplit('.').next() {
        Some("png") => "image/png",
        Some("svg") => "image/svg+xml",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

async fn get_artifact(
    State(state): State<Arc<AppState>>,
    Path((id, path)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    if !is_valid_job_id(&id) {
        return Err(ApiError::not_found(format!("unknown job {id}")));
    }
    let dir = job_dir(&state.options.job_root, &id)?;
    let file = resolve_artifact(&dir, &path)
        .ok_or_else(|| ApiError::bad_request(format!("invalid artifact path {path:?}"), Vec::new()))?;
    if path.ends_with(".partial") || !dir.join(MANIFEST).is_file() {
        return Err(ApiError::not_found(format!("no artifact {path}")));
    }
    let bytes = blocking(move || if file.is_file() { std::fs::read(&file).ok() } else { None }).await?;
    match bytes {
        Some(bytes) => Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response()),
        None => Err(ApiError::not_found(format!("no artifact {path}"))),
    }
}

fn text_field(obj: &Map<String, Value>, key: &str, default: Option<&str>) -> Result<String, ApiError> {
    match (obj.get(key), default) {
        (Some(Value::String(s)), _) => Ok(s.clone()),
        (None, Some(d)) => Ok(d.to_string()),
        (None, None) => Err(ApiError::bad_request(
            format!("{key}: missing"),
            vec![FieldViolation {
                path: key.into(),
                message: "missing".into(),
            }],
        )),
        (Some(_), _) => Err(ApiError::bad_request(
            format!("{key}: expected a string"),
            vec![FieldViolation {
                path: key.into(),
                message: "expected a string".into(),
            }],
        )),
    }
}

fn seed_field(obj: &Map<String, Value>) -> Result<u64, ApiError> {
    match obj.get("seed") {
        None => Ok(0),
        Some(v) => v.as_u64().ok_or_else(|| {
            ApiError::bad_request(
                "seed: expected a non-negative integer",
                vec![FieldViolation {
                    path: "seed".into(),
                    message: "expected a non-negative integer".into(),
                }],
            )
        }),
    }
}

fn png_b64(img: &Image) -> Result<String, ApiError> {
    img.to_png()
        .map(|b| STANDARD.encode(b))
        .map_err(|e| ApiError::internal(e.to_string()))
}

async fn deform(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let obj = parse_object(&body)?;
    let text = text_field(&obj, "text", None)?;
    let font_ref = text_field(&obj, "font_ref", Some(wordart_core::orchestrator::BUILTIN_FONT))?;
    let seed = seed_field(&obj)?;
    if text.is_empty() || text.chars().count() > wordart_core::orchestrator::MAX_TEXT_CHARS {
        return Err(ApiError::bad_request(
            "text: must hold 1 to 8 characters",
            vec![FieldViolation {
                path: "text".into(),
                message: "must hold 1 to 8 characters".into(),
            }],
        ));
    }
    let directives = match obj.get("overrides").or_else(|| obj.get("directives")) {
        Some(o) if !o.is_null() => apply_overrides(&Directives::default(), o)?,
        _ => Directives::default(),
    };
    let options = state.options.clone();
    let out = blocking(move || -> Result<Value, ApiError> {
        let face = resolve_font(&font_ref, options.font_dir.as_deref())?;
        let settings = &options.settings;
        let raster = settings.raster();
        let mut glyphs = Vec::new();
        for c in text.chars() {
            let glyph = prepare_glyph(&face, c, &raster, settings.margin)?;
            let out = deform_glyph(&glyph, &directives.target_shape, &directives.region_policy, &settings.deform_config(seed))
                .map_err(|e| ApiError::bad_request(e.to_string(), Vec::new()))?;
            glyphs.push(json!({
                "character": c.to_string(),
                "svg": out.svg,
                "png_b64": png_b64(&out.render)?,
                "target_iou_before": out.result.target_iou_before,
                "target_iou_after": out.result.target_iou_after,
            }));
        }
        Ok(json!({ "directives": directives, "glyphs": glyphs }))
    })
    .await??;
    Ok(Json(out))
}

async fn texturize(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let obj = parse_object(&body)?;
    let b64 = text_field(&obj, "stylized_png_b64", None)?;
    let prompt = text_field(&obj, "texture_prompt", None)?;
    let seed = seed_field(&obj)?;
    let backend_config = text_field(&obj, "backend_config", Some(&state.default_backend))?;
    let img = STANDARD
        .decode(b64.trim())
        .map_err(|e| e.to_string())
        .and_then(|bytes| Image::from_png(&bytes).map_err(|e| e.to_string()))
        .map_err(|e| ApiError::bad_request(format!("stylized_png_b64: undecodable image ({e})"), Vec::new()))?;
    let backends = state.backends_for(&backend_config)?;
    let out = blocking(move || {
        let req = TexturizeRequest {
            prompt,
            control: control_map(&img).quantized(),
            seed,
        };
        backends.style.texturize(&req)
    })
    .await?
    .map_err(|e| match e {
        BackendError::BadRequest(m) => ApiError::bad_request(m, Vec::new()),
        other => ApiError::new(StatusCode::BAD_GATEWAY, other.to_string()),
    })?;
    let png = out.quantized().to_png().map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(json!({ "image_png_b64": STANDARD.encode(&png), "sha256": sha256_hex(&png) })))
}
