//! Job pipeline: plan, then per iteration deform, stylize and score every
//! variant, gate on the number of passing candidates, replan or texturize.
//! Every artifact is written as soon as it exists, so an interrupted job can
//! be resumed from its directory without repeating backend calls.

pub mod store;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::diffrast::{rasterize, RasterConfig};
use crate::fontparse::{builtin_font_bytes, extract_glyph, load_font, normalize_outline, FontError, FontFace, GlyphOutline};
use crate::genbackends::{
    control_map, depth_map, BackendError, LegibilityScorer, MockBackend, RemoteBackend, ScoreBackend, ScoreReport,
    StyleBackend, StylizeRequest, TexturizeRequest, DEFAULT_STRENGTH, DEFAULT_THRESHOLD,
};
use crate::image::Image;
use crate::planner::{apply_overrides, plan, replan, Directives, FieldViolation, PlanBackend, PlanError, PlanFeedback, Provenance};
use crate::semtypo::{build_target, optimize_deformation, outline_to_svg, DeformConfig, DeformError, DeformResult};
use crate::shapeparam::{from_params, to_params, RegionPolicy};

pub use store::{
    candidate_dir, is_valid_job_id, job_dir, load_job, persist_job, resolve_artifact, sha256_hex, ArtifactRef, MANIFEST,
};

pub const BUILTIN_FONT: &str = "builtin";
pub const MOCK_BACKEND: &str = "mock";
pub const MAX_TEXT_CHARS: usize = 8;
pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_CANVAS: usize = 64;
pub const DEFAULT_MARGIN: f64 = 12.0;
pub const DEFAULT_INIT_JITTER: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("invalid request: {}", .0.iter().map(|f| format!("{}: {}", f.path, f.message)).collect::<Vec<_>>().join("; "))]
    InvalidRequest(Vec<FieldViolation>),
    #[error("character {0:?} cannot be rendered with the chosen font")]
    UnmappableCharacter(char),
    #[error("font: {0}")]
    Font(#[from] FontError),
    #[error("job not found: {0}")]
    NotFound(String),
    #[error("corrupt job: {0}")]
    CorruptJob(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("pipeline halted by stage hook")]
    Halted,
}

fn violation(path: &str, message: impl Into<String>) -> FieldViolation {
    FieldViolation {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub text: String,
    pub user_text: String,
    #[serde(default = "default_font_ref")]
    pub font_ref: String,
    /// Partial directives applied on top of the plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<Value>,
    /// `"mock"` or the base URL of a backend service.
    #[serde(default = "default_backend")]
    pub backend_config: String,
}

fn default_font_ref() -> String {
    BUILTIN_FONT.to_string()
}

fn default_backend() -> String {
    MOCK_BACKEND.to_string()
}

impl JobRequest {
    pub fn new(text: &str, user_text: &str) -> Self {
        Self {
            text: text.to_string(),
            user_text: user_text.to_string(),
            font_ref: default_font_ref(),
            overrides: None,
            backend_config: default_backend(),
        }
    }

    /// Parses a request document, reporting every malformed field.
    pub fn from_json(raw: &Value) -> Result<Self, OrchestratorError> {
        let Some(obj) = raw.as_object() else {
            return Err(OrchestratorError::InvalidRequest(vec![violation("$", "expected a JSON object")]));
        };
        let mut errors = Vec::new();
        let mut text_field = |key: &str, required: bool, default: &str| -> String {
            match obj.get(key) {
                None if required => {
                    errors.push(violation(key, "missing"));
                    String::new()
                }
                None => default.to_string(),
                Some(Value::String(s)) => s.clone(),
                Some(_) => {
                    errors.push(violation(key, "expected a string"));
                    String::new()
                }
            }
        };
        let req = JobRequest {
            text: text_field("text", true, ""),
            user_text: text_field("user_text", true, ""),
            font_ref: text_field("font_ref", false, BUILTIN_FONT),
            backend_config: text_field("backend_config", false, MOCK_BACKEND),
            overrides: obj.get("overrides").filter(|v| !v.is_null()).cloned(),
        };
        if errors.is_empty() {
            req.validate()?;
            Ok(req)
        } else {
            Err(OrchestratorError::InvalidRequest(errors))
        }
    }

    /// Field-level checks that need no font.
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let mut errors = Vec::new();
        let n = self.text.chars().count();
        if n == 0 {
            errors.push(violation("text", "must not be empty"));
        } else if n > MAX_TEXT_CHARS {
            errors.push(violation("text", format!("at most {MAX_TEXT_CHARS} characters")));
        }
        if self.user_text.trim().is_empty() {
            errors.push(violation("user_text", "must not be empty"));
        }
        if self.font_ref.is_empty() {
            errors.push(violation("font_ref", "must not be empty"));
        }
        if let Err(msg) = BackendSpec::parse(&self.backend_config) {
            errors.push(violation("backend_config", msg));
        }
        if let Some(o) = &self.overrides {
            if let Err(PlanError::SchemaViolation(v)) = apply_overrides(&Directives::default(), o) {
                errors.extend(v.into_iter().map(|f| violation(&format!("overrides.{}", f.path), f.message)));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(OrchestratorError::InvalidRequest(errors))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock,
    Remote(String),
}

impl BackendSpec {
    pub fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == MOCK_BACKEND {
            Ok(BackendSpec::Mock)
        } else if s.starts_with("http://") && s.len() > "http://".len() {
            Ok(BackendSpec::Remote(s.to_string()))
        } else {
            Err(format!("expected \"mock\" or an http:// base URL, got {s:?}"))
        }
    }
}

/// The generative services a pipeline talks to.
#[derive(Clone)]
pub struct Backends {
    pub style: Arc<dyn StyleBackend>,
    pub scorer: Arc<dyn ScoreBackend>,
    pub planner: Option<Arc<dyn PlanBackend>>,
}

impl Backends {
    pub fn mock() -> Self {
        Self {
            style: Arc::new(MockBackend),
            scorer: Arc::new(LegibilityScorer),
            planner: None,
        }
    }

    /// Remote stylization and planning; scoring stays local unless
    /// `remote_scorer` is set.
    pub fn remote(base_url: &str, remote_scorer: bool) -> Self {
        let remote = Arc::new(RemoteBackend::new(base_url));
        Self {
            style: remote.clone(),
            scorer: if remote_scorer { remote.clone() } else { Arc::new(LegibilityScorer) },
            planner: Some(remote),
        }
    }

    pub fn from_spec(spec: &BackendSpec) -> Self {
        match spec {
            BackendSpec::Mock => Self::mock(),
            BackendSpec::Remote(url) => Self::remote(url, false),
        }
    }
}

/// Everything that determines a job's outputs; stored in the manifest so a
/// resumed job reproduces the original run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub threshold: f64,
    pub canvas: usize,
    pub margin: f64,
    pub strength: f64,
    /// Template for every candidate; `seed` is replaced per candidate and
    /// the raster size by `canvas`.
    pub deform: DeformConfig,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            canvas: DEFAULT_CANVAS,
            margin: DEFAULT_MARGIN,
            strength: DEFAULT_STRENGTH,
            deform: DeformConfig {
                init_jitter: DEFAULT_INIT_JITTER,
                ..DeformConfig::default()
            },
        }
    }
}

impl RunSettings {
    pub fn raster(&self) -> RasterConfig {
        RasterConfig {
            width: self.canvas,
            height: self.canvas,
            ..self.deform.raster.clone()
        }
    }

    pub fn deform_config(&self, seed: u64) -> DeformConfig {
        DeformConfig {
            seed,
            raster: self.raster(),
            ..self.deform.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub job_root: PathBuf,
    /// When set, non-builtin font refs name files in this directory.
    pub font_dir: Option<PathBuf>,
    pub workers: usize,
    /// Settings for newly submitted jobs.
    pub settings: RunSettings,
}

impl PipelineOptions {
    pub fn new(job_root: impl Into<PathBuf>) -> Self {
        Self {
            job_root: job_root.into(),
            font_dir: None,
            workers: DEFAULT_WORKERS,
            settings: RunSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Planning,
    Deforming,
    Stylizing,
    Gating,
    Texturizing,
    Done,
    FailedBudget,
    FailedError,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::FailedBudget | JobStatus::FailedError)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformRecord {
    pub svg: ArtifactRef,
    pub raster: ArtifactRef,
    pub target_iou_before: f64,
    pub target_iou_after: f64,
    pub final_loss: Option<f64>,
    pub steps: usize,
    pub empty_glyph: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub character: String,
    pub iteration: usize,
    pub index: usize,
    pub seed: u64,
    pub deform: DeformRecord,
    pub depth: ArtifactRef,
    pub stylized: ArtifactRef,
    pub score: ScoreReport,
    pub textured: Option<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub request: JobRequest,
    pub settings: RunSettings,
    pub status: JobStatus,
    pub provenance: Option<Provenance>,
    pub directives_history: Vec<Directives>,
    pub iterations_used: usize,
    pub candidates: Vec<CandidateRecord>,
    /// Cause chain of a `failed_error` job, outermost first.
    pub error: Option<Vec<String>>,
    pub created_ms: u64,
    pub updated_ms: u64,
}

impl JobRecord {
    pub fn new(id: &str, request: JobRequest, settings: RunSettings) -> Self {
        let now = now_ms();
        Self {
            id: id.to_string(),
            request,
            settings,
            status: JobStatus::Planning,
            provenance: None,
            directives_history: Vec::new(),
            iterations_used: 0,
            candidates: Vec::new(),
            error: None,
            created_ms: now,
            updated_ms: now,
        }
    }

    pub fn artifacts(&self) -> Vec<&ArtifactRef> {
        let mut out = Vec::new();
        for c in &self.candidates {
            out.extend([&c.deform.svg, &c.deform.raster, &c.depth, &c.stylized]);
            out.extend(c.textured.as_ref());
        }
        out
    }

    pub fn passed(&self) -> impl Iterator<Item = &CandidateRecord> {
        self.candidates.iter().filter(|c| c.score.passed)
    }

    /// Copy with both timestamps zeroed, for comparing reruns.
    pub fn without_timestamps(&self) -> Self {
        Self {
            created_ms: 0,
            updated_ms: 0,
            ..self.clone()
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// 16 lowercase hex characters drawn from `rng`.
pub fn new_job_id(rng: &mut impl Rng) -> String {
    format!("{:016x}", rng.random::<u64>())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum GateDecision {
    Pass,
    Retry,
    Exhausted { passed: usize, required: usize },
}

/// `Pass` iff at least `k` reports passed; otherwise `Retry` while budget
/// remains.
pub fn quality_gate(scores: &[ScoreReport], k: usize, budget_remaining: bool) -> GateDecision {
    let passed = scores.iter().filter(|s| s.passed).count();
    if passed >= k {
        GateDecision::Pass
    } else if budget_remaining {
        GateDecision::Retry
    } else {
        GateDecision::Exhausted { passed, required: k }
    }
}

/// Reads a font by reference: the built-in face, a file in `font_dir`, or
/// (without `font_dir`) a filesystem path.
pub fn resolve_font(font_ref: &str, font_dir: Option<&Path>) -> Result<FontFace, OrchestratorError> {
    if font_ref == BUILTIN_FONT {
        return Ok(load_font(builtin_font_bytes())?);
    }
    let path = match font_dir {
        Some(dir) => {
            let name = Path::new(font_ref);
            let plain = name.components().count() == 1 && name.file_name().is_some_and(|f| f == name.as_os_str());
            if !plain {
                return Err(OrchestratorError::InvalidRequest(vec![violation(
                    "font_ref",
                    "must name a file in the font directory",
                )]));
            }
            dir.join(name)
        }
        None => PathBuf::from(font_ref),
    };
    let bytes = std::fs::read(&path).map_err(|e| {
        OrchestratorError::InvalidRequest(vec![violation("font_ref", format!("{}: {e}", path.display()))])
    })?;
    Ok(load_font(&bytes)?)
}

/// A glyph scaled and centered on the canvas, with its soft render and the
/// binarized mask used for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGlyph {
    pub character: char,
    pub outline: GlyphOutline,
    pub render: Image,
    pub mask: Image,
}

pub fn prepare_glyph(face: &FontFace, c: char, raster: &RasterConfig, margin: f64) -> Result<PreparedGlyph, OrchestratorError> {
    if !face.has_glyph(c) {
        return Err(OrchestratorError::UnmappableCharacter(c));
    }
    let outline = match extract_glyph(face, c, raster.width as f64) {
        Ok(o) => o,
        Err(FontError::MissingGlyph(_) | FontError::UnsupportedFont(_)) => {
            return Err(OrchestratorError::UnmappableCharacter(c))
        }
        Err(e) => return Err(e.into()),
    };
    let outline = normalize_outline(&outline)?;
    if outline.is_empty() {
        return Err(OrchestratorError::UnmappableCharacter(c));
    }
    let outline = outline.fit_to_canvas(raster.width, raster.height, margin);
    let render = rasterize(&to_params(&outline), raster)
        .map_err(|e| OrchestratorError::Io(e.to_string()))?
        .image;
    let mask = Image::from_fn_clamped(render.width(), render.height(), 1, |x, y, _| {
        if render.get(x, y, 0) >= 0.5 {
            1.0
        } else {
            0.0
        }
    });
    Ok(PreparedGlyph {
        character: c,
        outline,
        render,
        mask,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformOutput {
    pub result: DeformResult,
    pub outline: GlyphOutline,
    pub render: Image,
    pub svg: String,
}

/// Deforms a prepared glyph towards a library silhouette.
pub fn deform_glyph(
    glyph: &PreparedGlyph,
    target_shape: &str,
    policy: &RegionPolicy,
    cfg: &DeformConfig,
) -> Result<DeformOutput, DeformError> {
    let target = build_target(target_shape, &glyph.render, &cfg.raster)?;
    let result = optimize_deformation(&glyph.outline, policy, &target, cfg)?;
    let outline = from_params(&result.final_params, &glyph.outline);
    let render = rasterize(&result.final_params, &cfg.raster)?.image;
    let svg = outline_to_svg(&outline, cfg.raster.width, cfg.raster.height);
    Ok(DeformOutput {
        result,
        outline,
        render,
        svg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Planned,
    Replanned,
    Deformed,
    Depth,
    Stylized,
    Scored,
    Recorded,
    Textured,
}

/// A stage whose output has just been persisted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageEvent {
    pub stage: Stage,
    pub iteration: usize,
    pub index: usize,
}

/// Called after every persisted stage; returning `true` stops the pipeline
/// as if the process had been killed.
pub type StageHook = Arc<dyn Fn(&StageEvent) -> bool + Send + Sync>;

fn cause_chain(context: String, err: &dyn std::error::Error) -> Vec<String> {
    let mut chain = vec![context, err.to_string()];
    let mut source = err.source();
    while let Some(e) = source {
        chain.push(e.to_string());
        source = e.source();
    }
    chain
}

enum TaskError {
    Halted,
    Io(OrchestratorError),
    Failed(Vec<String>),
}

impl From<OrchestratorError> for TaskError {
    fn from(e: OrchestratorError) -> Self {
        TaskError::Io(e)
    }
}

struct CandTask {
    glyph: usize,
    index: usize,
    seed: u64,
}

enum Msg<R> {
    Started,
    Finished(Result<R, TaskError>),
}

/// Runs `tasks` on up to `workers` threads. Results arrive on the calling
/// thread in completion order; `on_msg` returning `false` stops handing out
/// further tasks.
fn run_pool<T: Sync, R: Send>(
    tasks: &[T],
    workers: usize,
    work: impl Fn(&T, &dyn Fn()) -> Result<R, TaskError> + Sync,
    mut on_msg: impl FnMut(Msg<R>) -> bool,
) {
    let next = Mutex::new(0usize);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Msg<R>>();
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, tasks.len().max(1)) {
            let tx = tx.clone();
            let (next, stop, work) = (&next, &stop, &work);
            s.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = {
                    let mut n = next.lock().expect("task counter");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(task) = tasks.get(i) else { break };
                let started = || {
                    let _ = tx.send(Msg::Started);
                };
                if tx.send(Msg::Finished(work(task, &started))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for msg in rx {
            if !on_msg(msg) {
                stop.store(true, Ordering::SeqCst);
            }
        }
    });
}

#[derive(Clone)]
pub struct Pipeline {
    options: PipelineOptions,
    backends: Option<Backends>,
    hook: Option<StageHook>,
}

struct IterCtx<'a> {
    dir: &'a Path,
    settings: &'a RunSettings,
    iteration: usize,
    directives: &'a Directives,
    glyphs: &'a [PreparedGlyph],
    backends: &'a Backends,
}

impl Pipeline {
    pub fn new(options: PipelineOptions) -> Self {
        Self {
            options,
            backends: None,
            hook: None,
        }
    }

    /// Uses `backends` for every job instead of the request's
    /// `backend_config`.
    pub fn with_backends(mut self, backends: Backends) -> Self {
        self.backends = Some(backends);
        self
    }

    pub fn with_stage_hook(mut self, hook: StageHook) -> Self {
        self.hook = Some(hook);
        self
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.options
    }

    fn emit(&self, stage: Stage, iteration: usize, index: usize) -> bool {
        self.hook
            .as_ref()
            .is_some_and(|h| h(&StageEvent { stage, iteration, index }))
    }

    /// Checks a request against the font and writes the initial manifest.
    pub fn submit(&self, req: JobRequest, id: &str) -> Result<JobRecord, OrchestratorError> {
        req.validate()?;
        if !is_valid_job_id(id) {
            return Err(OrchestratorError::InvalidRequest(vec![violation("id", "invalid job id")]));
        }
        let face = resolve_font(&req.font_ref, self.options.font_dir.as_deref())?;
        let settings = &self.options.settings;
        let raster = settings.raster();
        for c in req.text.chars() {
            prepare_glyph(&face, c, &raster, settings.margin)?;
        }
        let dir = job_dir(&self.options.job_root, id)?;
        if dir.join(MANIFEST).exists() {
            return Err(OrchestratorError::InvalidRequest(vec![violation("id", format!("job {id} already exists"))]));
        }
        let record = JobRecord::new(id, req, settings.clone());
        persist_job(&record, &self.options.job_root)?;
        Ok(record)
    }

    /// Submits and runs a job to completion under a fresh random id.
    pub fn run_request(&self, req: JobRequest) -> Result<JobRecord, OrchestratorError> {
        let id = new_job_id(&mut rand::rng());
        let record = self.submit(req, &id)?;
        self.run(record)
    }

    /// Continues a job from its persisted state.
    pub fn resume(&self, id: &str) -> Result<JobRecord, OrchestratorError> {
        let record = load_job(&self.options.job_root, id)?;
        self.run(record)
    }

    fn persist(&self, record: &mut JobRecord) -> Result<(), OrchestratorError> {
        record.updated_ms = now_ms();
        persist_job(record, &self.options.job_root)
    }

    fn fail(&self, mut record: JobRecord, chain: Vec<String>) -> Result<JobRecord, OrchestratorError> {
        record.status = JobStatus::FailedError;
        record.error = Some(chain);
        self.persist(&mut record)?;
        Ok(record)
    }

    /// Drives a job to a terminal status. Backend and font failures end in
    /// `failed_error`; only storage failures and halts are returned as
    /// errors.
    pub fn run(&self, mut record: JobRecord) -> Result<JobRecord, OrchestratorError> {
        if record.status.is_terminal() {
            return Ok(record);
        }
        let dir = job_dir(&self.options.job_root, &record.id)?;
        let backends = match &self.backends {
            Some(b) => b.clone(),
            None => match BackendSpec::parse(&record.request.backend_config) {
                Ok(spec) => Backends::from_spec(&spec),
                Err(msg) => return self.fail(record, vec!["invalid backend_config".into(), msg]),
            },
        };
        let settings = record.settings.clone();
        let raster = settings.raster();
        let glyphs: Result<Vec<_>, _> = resolve_font(&record.request.font_ref, self.options.font_dir.as_deref())
            .and_then(|face| {
                record
                    .request
                    .text
                    .chars()
                    .map(|c| prepare_glyph(&face, c, &raster, settings.margin))
                    .collect()
            });
        let glyphs = match glyphs {
            Ok(g) => g,
            Err(e) => return self.fail(record, cause_chain("glyph preparation failed".into(), &e)),
        };

        if record.directives_history.is_empty() {
            record.status = JobStatus::Planning;
            let planned = plan(&record.request.user_text, backends.planner.as_deref()).and_then(|outcome| {
                let d = match &record.request.overrides {
                    Some(o) => apply_overrides(&outcome.directives, o)?,
                    None => outcome.directives,
                };
                Ok((d, outcome.provenance))
            });
            match planned {
                Ok((d, provenance)) => {
                    record.directives_history.push(d);
                    record.provenance = Some(provenance);
                }
                Err(e) => return self.fail(record, cause_chain("planning failed".into(), &e)),
            }
            self.persist(&mut record)?;
            if self.emit(Stage::Planned, 0, 0) {
                return Err(OrchestratorError::Halted);
            }
        }

        let mut iteration = 0;
        loop {
            let directives = record.directives_history[iteration].clone();
            let ctx = IterCtx {
                dir: &dir,
                settings: &settings,
                iteration,
                directives: &directives,
                glyphs: &glyphs,
                backends: &backends,
            };
            if let Some(chain) = self.run_iteration(&ctx, &mut record)? {
                return self.fail(record, chain);
            }
            record.iterations_used = record.iterations_used.max(iteration + 1);
            record.status = JobStatus::Gating;
            self.persist(&mut record)?;

            let k = directives.min_successes_k;
            let budget_remaining = iteration < directives.retry_budget;
            let decisions: Vec<GateDecision> = glyphs
                .iter()
                .map(|g| {
                    let scores: Vec<ScoreReport> = record
                        .candidates
                        .iter()
                        .filter(|c| c.character == g.character.to_string())
                        .map(|c| c.score)
                        .collect();
                    quality_gate(&scores, k, budget_remaining)
                })
                .collect();
            if decisions.iter().all(|d| *d == GateDecision::Pass) {
                return self.texturize(&ctx, record);
            }
            if !budget_remaining {
                record.status = JobStatus::FailedBudget;
                self.persist(&mut record)?;
                return Ok(record);
            }
            if record.directives_history.len() == iteration + 1 {
                let successes = glyphs
                    .iter()
                    .map(|g| record.passed().filter(|c| c.character == g.character.to_string()).count())
                    .min()
                    .unwrap_or(0);
                let fb = PlanFeedback {
                    iteration: iteration + 1,
                    successes_so_far: successes,
                    failure_scores: record
                        .candidates
                        .iter()
                        .filter(|c| c.iteration == iteration && !c.score.passed)
                        .map(|c| c.score.legibility)
                        .collect(),
                };
                match replan(&directives, &fb, backends.planner.as_deref()) {
                    Ok(next) => record.directives_history.push(next),
                    Err(e) => return self.fail(record, cause_chain("replanning failed".into(), &e)),
                }
                self.persist(&mut record)?;
                if self.emit(Stage::Replanned, iteration + 1, 0) {
                    return Err(OrchestratorError::Halted);
                }
            }
            iteration += 1;
        }
    }

    /// Generates the missing candidates of one iteration. Returns the cause
    /// chain of the first candidate failure.
    fn run_iteration(&self, ctx: &IterCtx, record: &mut JobRecord) -> Result<Option<Vec<String>>, OrchestratorError> {
        let nv = ctx.directives.num_variants;
        let tasks: Vec<CandTask> = (0..ctx.glyphs.len() * nv)
            .filter(|&i| !record.candidates.iter().any(|c| c.iteration == ctx.iteration && c.index == i))
            .map(|i| CandTask {
                glyph: i / nv,
                index: i,
                seed: ctx.directives.base_seed.wrapping_add(i as u64),
            })
            .collect();
        if tasks.is_empty() {
            return Ok(None);
        }
        record.status = JobStatus::Deforming;
        self.persist(record)?;
        let mut outcome: Result<Option<Vec<String>>, OrchestratorError> = Ok(None);
        run_pool(
            &tasks,
            self.options.workers,
            |task, started| self.run_candidate(ctx, task, started),
            |msg| match msg {
                Msg::Started => {
                    if record.status == JobStatus::Deforming {
                        record.status = JobStatus::Stylizing;
                        if let Err(e) = self.persist(record) {
                            outcome = Err(e);
                            return false;
                        }
                    }
                    true
                }
                Msg::Finished(Ok(cand)) => {
                    let (it, idx) = (cand.iteration, cand.index);
                    record.candidates.push(cand);
                    record.candidates.sort_by_key(|c| (c.iteration, c.index));
                    if let Err(e) = self.persist(record) {
                        outcome = Err(e);
                        return false;
                    }
                    if self.emit(Stage::Recorded, it, idx) {
                        outcome = Err(OrchestratorError::Halted);
                        return false;
                    }
                    true
                }
                Msg::Finished(Err(e)) => {
                    if matches!(outcome, Ok(None)) {
                        outcome = match e {
                            TaskError::Halted => Err(OrchestratorError::Halted),
                            TaskError::Io(e) => Err(e),
                            TaskError::Failed(chain) => Ok(Some(chain)),
                        };
                    }
                    false
                }
            },
        );
        outcome
    }

    fn run_candidate(&self, ctx: &IterCtx, task: &CandTask, started: &dyn Fn()) -> Result<CandidateRecord, TaskError> {
        let glyph = &ctx.glyphs[task.glyph];
        let rel = candidate_dir(ctx.iteration, task.index);
        let failed = |what: &str, e: &dyn std::error::Error| TaskError::Failed(cause_chain(format!("{rel}: {what} failed"), e));
        let halt_after = |stage: Stage| {
            if self.emit(stage, ctx.iteration, task.index) {
                Err(TaskError::Halted)
            } else {
                Ok(())
            }
        };
        let d = ctx.directives;

        let cfg = ctx.settings.deform_config(task.seed);
        let out = deform_glyph(glyph, &d.target_shape, &d.region_policy, &cfg).map_err(|e| failed("deformation", &e))?;
        let svg = store::write_artifact(ctx.dir, &format!("{rel}/deformed.svg"), out.svg.as_bytes())?;
        let png = out.render.to_png().map_err(|e| failed("encoding", &e))?;
        let raster = store::write_artifact(ctx.dir, &format!("{rel}/deformed.png"), &png)?;
        halt_after(Stage::Deformed)?;
        started();

        let depth = depth_map(&out.render).quantized();
        let depth_png = depth.to_png().map_err(|e| failed("encoding", &e))?;
        let depth_ref = store::write_artifact(ctx.dir, &format!("{rel}/depth.png"), &depth_png)?;
        halt_after(Stage::Depth)?;

        let stylized_rel = format!("{rel}/stylized.png");
        let (stylized, stylized_ref) = match cached_image(ctx.dir, &stylized_rel, depth.width(), depth.height())? {
            Some(hit) => hit,
            None => {
                let req = StylizeRequest {
                    prompt: d.style_prompt.clone(),
                    depth: depth.clone(),
                    seed: task.seed,
                    strength: ctx.settings.strength,
                };
                let img = ctx.backends.style.stylize(&req).map_err(|e| failed("stylize", &e))?;
                check_dims(&img, depth.width(), depth.height()).map_err(|e| failed("stylize", &e))?;
                let img = img.quantized();
                let bytes = img.to_png().map_err(|e| failed("encoding", &e))?;
                let r = store::write_artifact(ctx.dir, &stylized_rel, &bytes)?;
                halt_after(Stage::Stylized)?;
                (img, r)
            }
        };

        let score_rel = format!("{rel}/score.json");
        let cached_score = store::read_artifact(ctx.dir, &score_rel)?
            .and_then(|b| serde_json::from_slice::<ScoreReport>(&b).ok())
            .filter(|s| s.threshold == ctx.settings.threshold);
        let score = match cached_score {
            Some(s) => s,
            None => {
                let s = ctx
                    .backends
                    .scorer
                    .score(&stylized, &glyph.mask, ctx.settings.threshold)
                    .map_err(|e| failed("scoring", &e))?;
                let s = ScoreReport::new(s.legibility, ctx.settings.threshold);
                let bytes = serde_json::to_vec(&s).map_err(|e| TaskError::Io(OrchestratorError::Io(e.to_string())))?;
                store::write_artifact(ctx.dir, &score_rel, &bytes)?;
                halt_after(Stage::Scored)?;
                s
            }
        };

        let r = &out.result;
        Ok(CandidateRecord {
            character: glyph.character.to_string(),
            iteration: ctx.iteration,
            index: task.index,
            seed: task.seed,
            deform: DeformRecord {
                svg,
                raster,
                target_iou_before: r.target_iou_before,
                target_iou_after: r.target_iou_after,
                final_loss: r.loss_trace.last().copied(),
                steps: r.loss_trace.len(),
                empty_glyph: r.empty_glyph,
            },
            depth: depth_ref,
            stylized: stylized_ref,
            score,
            textured: None,
        })
    }

    fn texturize(&self, ctx: &IterCtx, mut record: JobRecord) -> Result<JobRecord, OrchestratorError> {
        let pending: Vec<(usize, usize, u64, ArtifactRef)> = record
            .candidates
            .iter()
            .filter(|c| c.score.passed && c.textured.is_none())
            .map(|c| (c.iteration, c.index, c.seed, c.stylized.clone()))
            .collect();
        if !pending.is_empty() {
            record.status = JobStatus::Texturizing;
            self.persist(&mut record)?;
        }
        let prompt = &ctx.directives.texture_prompt;
        let mut outcome: Result<Option<Vec<String>>, OrchestratorError> = Ok(None);
        run_pool(
            &pending,
            self.options.workers,
            |(iteration, index, seed, stylized), _| {
                let rel = candidate_dir(*iteration, *index);
                let failed =
                    |what: &str, e: &dyn std::error::Error| TaskError::Failed(cause_chain(format!("{rel}: {what} failed"), e));
                let bytes = store::read_artifact(ctx.dir, &stylized.path)?
                    .filter(|b| sha256_hex(b) == stylized.sha256)
                    .ok_or_else(|| TaskError::Io(OrchestratorError::CorruptJob(format!("{} missing or altered", stylized.path))))?;
                let img = Image::from_png(&bytes).map_err(|e| failed("decoding", &e))?;
                let out_rel = format!("{rel}/textured.png");
                if let Some((_, r)) = cached_image(ctx.dir, &out_rel, img.width(), img.height())? {
                    return Ok(((*iteration, *index), r));
                }
                let req = TexturizeRequest {
                    prompt: prompt.clone(),
                    control: control_map(&img).quantized(),
                    seed: *seed,
                };
                let tex = ctx.backends.style.texturize(&req).map_err(|e| failed("texturize", &e))?;
                check_dims(&tex, img.width(), img.height()).map_err(|e| failed("texturize", &e))?;
                let png = tex.quantized().to_png().map_err(|e| failed("encoding", &e))?;
                let r = store::write_artifact(ctx.dir, &out_rel, &png)?;
                if self.emit(Stage::Textured, *iteration, *index) {
                    return Err(TaskError::Halted);
                }
                Ok(((*iteration, *index), r))
            },
            |msg| match msg {
                Msg::Started => true,
                Msg::Finished(Ok(((it, idx), r))) => {
                    if let Some(c) = record.candidates.iter_mut().find(|c| c.iteration == it && c.index == idx) {
                        c.textured = Some(r);
                    }
                    if let Err(e) = self.persist(&mut record) {
                        outcome = Err(e);
                        return false;
                    }
                    true
                }
                Msg::Finished(Err(e)) => {
                    if matches!(outcome, Ok(None)) {
                        outcome = match e {
                            TaskError::Halted => Err(OrchestratorError::Halted),
                            TaskError::Io(e) => Err(e),
                            TaskError::Failed(chain) => Ok(Some(chain)),
                        };
                    }
                    false
                }
            },
        );
        if let Some(chain) = outcome? {
            return self.fail(record, chain);
        }
        record.status = JobStatus::Done;
        self.persist(&mut record)?;
        Ok(record)
    }
}

fn check_dims(img: &Image, w: usize, h: usize) -> Result<(), BackendError> {
    if img.width() != w || img.height() != h {
        return Err(BackendError::MalformedReply(format!(
            "image is {}x{}, expected {w}x{h}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// A previously written RGB artifact of the expected size, if readable.
fn cached_image(dir: &Path, rel: &str, w: usize, h: usize) -> Result<Option<(Image, ArtifactRef)>, OrchestratorError> {
    let Some(bytes) = store::read_artifact(dir, rel)? else {
        return Ok(None);
    };
    match Image::from_png(&bytes) {
        Ok(img) if img.width() == w && img.height() == h && img.channels() == 3 => Ok(Some((
            img,
            ArtifactRef {
                path: rel.to_string(),
                sha256: sha256_hex(&bytes),
            },
        ))),
        _ => Ok(None),
    }
}

/// Convenience entry point: runs `req` with the backends it names.
pub fn run_pipeline(req: JobRequest, options: PipelineOptions) -> Result<JobRecord, OrchestratorError> {
    Pipeline::new(options).run_request(req)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(passed: bool) -> ScoreReport {
        ScoreReport::new(if passed { 0.9 } else { 0.1 }, 0.5)
    }

    #[test]
    fn gate_examples() {
        let two = [report(true), report(true), report(false), report(false)];
        assert_eq!(quality_gate(&two, 2, true), GateDecision::Pass);
        let one = [report(true), report(false), report(false), report(false)];
        assert_eq!(quality_gate(&one, 2, true), GateDecision::Retry);
        assert_eq!(quality_gate(&[], 1, false), GateDecision::Exhausted { passed: 0, required: 1 });
    }

    #[test]
    fn request_validation_lists_fields() {
        let err = JobRequest::from_json(&serde_json::json!({"text": "", "user_text": 3})).unwrap_err();
        match err {
            OrchestratorError::InvalidRequest(v) => {
                assert_eq!(v.iter().map(|f| f.path.as_str()).collect::<Vec<_>>(), vec!["user_text"]);
            }
            other => panic!("{other:?}"),
        }
        let err = JobRequest::from_json(&serde_json::json!({"text": "", "user_text": "x"})).unwrap_err();
        assert!(matches!(err, OrchestratorError::InvalidRequest(v) if v[0].path == "text"));
    }

    #[test]
    fn backend_spec() {
        assert_eq!(BackendSpec::parse("mock"), Ok(BackendSpec::Mock));
        assert!(matches!(BackendSpec::parse("http://127.0.0.1:9"), Ok(BackendSpec::Remote(_))));
        assert!(BackendSpec::parse("ftp://x").is_err());
    }

    #[test]
    fn space_is_unmappable() {
        let face = load_font(builtin_font_bytes()).unwrap();
        let raster = RasterConfig::with_size(32, 32);
        assert_eq!(prepare_glyph(&face, ' ', &raster, 4.0).unwrap_err(), OrchestratorError::UnmappableCharacter(' '));
        assert_eq!(prepare_glyph(&face, 'Z', &raster, 4.0).unwrap_err(), OrchestratorError::UnmappableCharacter('Z'));
        let a = prepare_glyph(&face, 'A', &raster, 4.0).unwrap();
        assert!(a.mask.sum() > 0.0);
    }
}
