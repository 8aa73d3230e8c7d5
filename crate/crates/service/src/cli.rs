//! `wordart` command line: `generate`, `resume`, `deform`, `texturize`,
//! `serve`.
//!
//! Exit codes: 0 done, 2 failed_budget, 3 failed_error (or any other
//! failure), 64 usage.

use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use wordart_core::genbackends::TexturizeRequest;
use wordart_core::image::Image;
use wordart_core::orchestrator::{
    deform_glyph, job_dir, prepare_glyph, resolve_font, BackendSpec, Backends, JobRecord, JobRequest, JobStatus,
    OrchestratorError, Pipeline, PipelineOptions, StageHook, BUILTIN_FONT, DEFAULT_WORKERS, MOCK_BACKEND,
};
use wordart_core::planner::Directives;
use wordart_core::shapeparam::{RegionMode, RegionPolicy, DEFAULT_DEFORM_RATIO};

use crate::api::{router, AppState};
use crate::config::ServiceConfig;

pub const EXIT_DONE: i32 = 0;
pub const EXIT_FAILED_BUDGET: i32 = 2;
pub const EXIT_FAILED: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "wordart", version, about = "Semantic glyph deformation, stylization and texturing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline for a request and write the job directory.
    Generate(GenerateArgs),
    /// Continue an interrupted job.
    Resume(ResumeArgs),
    /// Deform glyphs towards a silhouette, without stylization.
    Deform(DeformArgs),
    /// Texture an already stylized image.
    Texturize(TexturizeArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Parallel candidate workers.
    #[arg(long, default_value_t = DEFAULT_WORKERS)]
    pub workers: usize,
    /// Optimization steps per candidate.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Legibility threshold for the quality gate.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Stop after this many persisted stages, as if the process died.
    #[arg(long, hide = true)]
    pub halt_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub text: String,
    /// Free-form design request.
    #[arg(long)]
    pub request: String,
    /// Font file path or "builtin".
    #[arg(long, default_value = BUILTIN_FONT)]
    pub font: String,
    /// "mock" or the base URL of a backend service.
    #[arg(long, default_value = MOCK_BACKEND)]
    pub backend: String,
    /// Job root directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub variants: Option<u64>,
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Job id (16 hex characters are generated when omitted).
    #[arg(long)]
    pub job_id: Option<String>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    /// Job root directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub job_id: String,
    #[arg(long, default_value_t = DEFAULT_WORKERS)]
    pub workers: usize,
    #[arg(long, hide = true)]
    pub halt_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DeformArgs {
    #[arg(long)]
    pub text: String,
    #[arg(long, default_value = BUILTIN_FONT)]
    pub font: String,
    /// Silhouette from the target library.
    #[arg(long, default_value = "circle")]
    pub target: String,
    /// Fraction of control points allowed to move.
    #[arg(long, default_value_t = DEFAULT_DEFORM_RATIO)]
    pub ratio: f64,
    /// Free every control point instead of the most salient ones.
    #[arg(long)]
    pub all_points: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory for deformed_<i>.svg / deformed_<i>.png.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TexturizeArgs {
    /// Stylized PNG.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub prompt: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = MOCK_BACKEND)]
    pub backend: String,
    /// Output PNG path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Flat TOML config; defaults to $WORDART_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub job_root: Option<PathBuf>,
    #[arg(long)]
    pub font_dir: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

pub fn exit_code(status: JobStatus) -> i32 {
    match status {
        JobStatus::Done => EXIT_DONE,
        JobStatus::FailedBudget => EXIT_FAILED_BUDGET,
        _ => EXIT_FAILED,
    }
}

/// Parses `args` (program name first) and runs the command. `backends`
/// replaces whatever the arguments name, for embedding and tests.
pub fn run<I, T>(args: I, backends: Option<Backends>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_DONE };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a, backends),
        Command::Resume(a) => resume(a, backends),
        Command::Deform(a) => deform(a),
        Command::Texturize(a) => texturize(a, backends),
        Command::Serve(a) => serve(a, backends),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILED
        }
    }
}

enum CliError {
    Usage(String),
    Failed(String),
}

impl From<OrchestratorError> for CliError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::InvalidRequest(_) | OrchestratorError::UnmappableCharacter(_) => CliError::Usage(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn halt_hook(after: Option<usize>) -> Option<StageHook> {
    let after = after?;
    let seen = Arc::new(AtomicUsize::new(0));
    Some(Arc::new(move |_| seen.fetch_add(1, Ordering::SeqCst) + 1 >= after))
}

fn pipeline(options: PipelineOptions, backends: Option<Backends>, halt_after: Option<usize>) -> Pipeline {
    let mut p = Pipeline::new(options);
    if let Some(b) = backends {
        p = p.with_backends(b);
    }
    if let Some(h) = halt_hook(halt_after) {
        p = p.with_stage_hook(h);
    }
    p
}

fn summary(record: &JobRecord, root: &std::path::Path) -> Value {
    json!({
        "job_id": record.id,
        "status": record.status,
        "job_dir": job_dir(root, &record.id).map(|d| d.display().to_string()).unwrap_or_default(),
        "iterations_used": record.iterations_used,
        "candidates": record.candidates.len(),
        "passed": record.passed().count(),
        "textured": record.candidates.iter().filter(|c| c.textured.is_some()).count(),
        "error": record.error,
    })
}

fn finish(result: Result<JobRecord, OrchestratorError>, root: &std::path::Path) -> Result<i32, CliError> {
    match result {
        Ok(record) => {
            println!("{}", serde_json::to_string_pretty(&summary(&record, root)).expect("summary serializes"));
            Ok(exit_code(record.status))
        }
        Err(OrchestratorError::Halted) => {
            eprintln!("halted");
            Ok(EXIT_FAILED)
        }
        Err(e) => Err(e.into()),
    }
}

fn generate(a: GenerateArgs, backends: Option<Backends>) -> Result<i32, CliError> {
    if a.run.workers < 1 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let mut overrides = Map::new();
    for (key, v) in [
        ("num_variants", a.variants),
        ("min_successes_K", a.k),
        ("retry_budget", a.budget),
        ("base_seed", a.seed),
    ] {
        if let Some(v) = v {
            overrides.insert(key.into(), json!(v));
        }
    }
    let req = JobRequest {
        text: a.text,
        user_text: a.request,
        font_ref: a.font,
        overrides: (!overrides.is_empty()).then_some(Value::Object(overrides)),
        backend_config: a.backend,
    };
    let mut options = PipelineOptions::new(&a.out);
    options.workers = a.run.workers;
    if let Some(s) = a.run.steps {
        options.settings.deform.steps = s;
    }
    if let Some(t) = a.run.threshold {
        options.settings.threshold = t;
    }
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Failed(format!("{}: {e}", a.out.display())))?;
    let p = pipeline(options, backends, a.run.halt_after);
    let id = a
        .job_id
        .unwrap_or_else(|| wordart_core::orchestrator::new_job_id(&mut rand::rng()));
    let record = p.submit(req, &id)?;
    finish(p.run(record), &a.out)
}

fn resume(a: ResumeArgs, backends: Option<Backends>) -> Result<i32, CliError> {
    let mut options = PipelineOptions::new(&a.out);
    options.workers = a.workers.max(1);
    let p = pipeline(options, backends, a.halt_after);
    finish(p.resume(&a.job_id), &a.out)
}

fn deform(a: DeformArgs) -> Result<i32, CliError> {
    let mut directives = Directives::default();
    directives.target_shape = a.target.clone();
    directives.region_policy = RegionPolicy {
        mode: if a.all_points { RegionMode::All } else { RegionMode::SaliencyRatio },
        contour_indices: Vec::new(),
        deform_ratio: a.ratio,
    };
    let directives = wordart_core::planner::validate_directives(&directives.to_json())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut options = PipelineOptions::new(&a.out);
    if let Some(s) = a.steps {
        options.settings.deform.steps = s;
    }
    let settings = &options.settings;
    let face = resolve_font(&a.font, None)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Failed(format!("{}: {e}", a.out.display())))?;
    let mut report = Vec::new();
    for (i, c) in a.text.chars().enumerate() {
        let glyph = prepare_glyph(&face, c, &settings.raster(), settings.margin)?;
        let out = deform_glyph(&glyph, &directives.target_shape, &directives.region_policy, &settings.deform_config(a.seed))
            .map_err(|e| CliError::Failed(e.to_string()))?;
        let svg_path = a.out.join(format!("deformed_{i}.svg"));
        let png_path = a.out.join(format!("deformed_{i}.png"));
        std::fs::write(&svg_path, &out.svg).map_err(|e| CliError::Failed(e.to_string()))?;
        let png = out.render.to_png().map_err(|e| CliError::Failed(e.to_string()))?;
        std::fs::write(&png_path, png).map_err(|e| CliError::Failed(e.to_string()))?;
        report.push(json!({
            "character": c.to_string(),
            "svg": svg_path.display().to_string(),
            "png": png_path.display().to_string(),
            "target_iou_before": out.result.target_iou_before,
            "target_iou_after": out.result.target_iou_after,
        }));
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(EXIT_DONE)
}

fn texturize(a: TexturizeArgs, backends: Option<Backends>) -> Result<i32, CliError> {
    let backends = match backends {
        Some(b) => b,
        None => Backends::from_spec(&BackendSpec::parse(&a.backend).map_err(CliError::Usage)?),
    };
    let bytes = std::fs::read(&a.input).map_err(|e| CliError::Usage(format!("{}: {e}", a.input.display())))?;
    let img = Image::from_png(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", a.input.display())))?;
    let req = TexturizeRequest {
        prompt: a.prompt,
        control: wordart_core::genbackends::control_map(&img).quantized(),
        seed: a.seed,
    };
    let out = backends.style.texturize(&req).map_err(|e| CliError::Failed(e.to_string()))?;
    let png = out.quantized().to_png().map_err(|e| CliError::Failed(e.to_string()))?;
    std::fs::write(&a.out, png).map_err(|e| CliError::Failed(format!("{}: {e}", a.out.display())))?;
    Ok(EXIT_DONE)
}

fn serve(a: ServeArgs, backends: Option<Backends>) -> Result<i32, CliError> {
    let mut cfg = ServiceConfig::load(a.config.as_deref()).map_err(CliError::Usage)?;
    if let Some(v) = a.listen {
        cfg.listen = v;
    }
    if let Some(v) = a.job_root {
        cfg.job_root = v;
    }
    if let Some(v) = a.font_dir {
        cfg.font_dir = Some(v);
    }
    if let Some(v) = a.backend {
        cfg.backend = v;
    }
    if let Some(v) = a.workers {
        cfg.worker_pool_size = v;
    }
    if let Some(v) = a.threshold {
        cfg.threshold = v;
    }
    cfg.validate().map_err(CliError::Usage)?;
    cfg.prepare_dirs().map_err(CliError::Usage)?;
    let mut state = AppState::new(cfg.pipeline_options(), &cfg.backend);
    if let Some(b) = backends {
        state = state.with_backends(b);
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Failed(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.listen)
            .await
            .map_err(|e| CliError::Failed(format!("{}: {e}", cfg.listen)))?;
        eprintln!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or(cfg.listen.clone()));
        axum::serve(listener, router(Arc::new(state)))
            .await
            .map_err(|e| CliError::Failed(e.to_string()))
    })?;
    Ok(EXIT_DONE)
}
