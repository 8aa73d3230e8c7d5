mod common;

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use common::SQUARE_TTF;
use serde_json::json;
use tempfile::TempDir;
use wordart_core::genbackends::{
    BackendError, LegibilityScorer, MockBackend, ScoreBackend, ScoreReport, StyleBackend, StylizeRequest,
    TexturizeRequest,
};
use wordart_core::image::Image;
use wordart_core::orchestrator::{
    load_job, persist_job, Backends, JobRecord, JobRequest, JobStatus, OrchestratorError, Pipeline, PipelineOptions,
    Stage, StageEvent, MANIFEST,
};

/// Mock services that log the seed of every call.
#[derive(Default)]
struct Counting {
    stylize: Mutex<Vec<u64>>,
    texturize: Mutex<Vec<u64>>,
    scores: Mutex<usize>,
}

impl StyleBackend for Counting {
    fn stylize(&self, req: &StylizeRequest) -> Result<Image, BackendError> {
        self.stylize.lock().unwrap().push(req.seed);
        MockBackend.stylize(req)
    }

    fn texturize(&self, req: &TexturizeRequest) -> Result<Image, BackendError> {
        self.texturize.lock().unwrap().push(req.seed);
        MockBackend.texturize(req)
    }
}

impl ScoreBackend for Counting {
    fn score(&self, candidate: &Image, mask: &Image, threshold: f64) -> Result<ScoreReport, BackendError> {
        *self.scores.lock().unwrap() += 1;
        LegibilityScorer.score(candidate, mask, threshold)
    }
}

fn backends(c: &Arc<Counting>) -> Backends {
    Backends {
        style: c.clone(),
        scorer: c.clone(),
        planner: None,
    }
}

fn options(root: &Path, threshold: f64, steps: usize) -> PipelineOptions {
    let fonts = root.join("fonts");
    std::fs::create_dir_all(&fonts).unwrap();
    std::fs::write(fonts.join("square.ttf"), SQUARE_TTF).unwrap();
    let mut o = PipelineOptions::new(root.join("jobs"));
    o.font_dir = Some(fonts);
    o.workers = 2;
    o.settings.threshold = threshold;
    o.settings.deform.steps = steps;
    o
}

fn square_request() -> JobRequest {
    JobRequest {
        font_ref: "square.ttf".into(),
        ..JobRequest::new("A", "A cat in jewelry design")
    }
}

fn run(root: &Path, threshold: f64, id: &str) -> (JobRecord, Arc<Counting>) {
    let counting = Arc::new(Counting::default());
    let p = Pipeline::new(options(root, threshold, 10)).with_backends(backends(&counting));
    let rec = p.submit(square_request(), id).unwrap();
    (p.run(rec).unwrap(), counting)
}

fn sorted(v: &Mutex<Vec<u64>>) -> Vec<u64> {
    let mut v = v.lock().unwrap().clone();
    v.sort();
    v
}

#[test]
fn always_pass_finishes_after_one_iteration() {
    let tmp = TempDir::new().unwrap();
    let (rec, calls) = run(tmp.path(), 0.0, "pass");
    assert_eq!(rec.status, JobStatus::Done);
    assert_eq!(rec.candidates.len(), 4);
    assert_eq!(rec.directives_history.len(), 1);
    assert_eq!(rec.iterations_used, 1);
    assert!(rec.candidates.iter().all(|c| c.textured.is_some() && c.score.passed));
    let base = rec.directives_history[0].base_seed;
    assert_eq!(sorted(&calls.stylize), (0..4).map(|i| base + i).collect::<Vec<_>>());
    assert_eq!(sorted(&calls.texturize), sorted(&calls.stylize));
    assert_eq!(*calls.scores.lock().unwrap(), 4);
}

#[test]
fn impossible_threshold_exhausts_the_budget() {
    let tmp = TempDir::new().unwrap();
    let (rec, calls) = run(tmp.path(), 1.01, "fail");
    assert_eq!(rec.status, JobStatus::FailedBudget);
    assert_eq!(rec.candidates.len(), 12);
    assert_eq!(rec.directives_history.len(), 3);
    assert_eq!(rec.iterations_used, 3);
    assert!(rec.candidates.iter().all(|c| c.textured.is_none()));
    assert!(calls.texturize.lock().unwrap().is_empty());
    assert_eq!(calls.stylize.lock().unwrap().len(), 12);
    for c in &rec.candidates {
        assert_eq!(c.seed, rec.directives_history[c.iteration].base_seed + c.index as u64);
    }
    let bases: Vec<u64> = rec.directives_history.iter().map(|d| d.base_seed - rec.directives_history[0].base_seed).collect();
    assert_eq!(bases, [0, 4, 12]);
}

#[test]
fn rerun_is_identical_apart_from_timestamps() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (ra, _) = run(a.path(), 0.0, "same");
    let (rb, _) = run(b.path(), 0.0, "same");
    assert_eq!(ra.without_timestamps(), rb.without_timestamps());
    for art in ra.artifacts() {
        let x = std::fs::read(a.path().join("jobs/same").join(&art.path)).unwrap();
        let y = std::fs::read(b.path().join("jobs/same").join(&art.path)).unwrap();
        assert_eq!(x, y, "{}", art.path);
    }
}

#[test]
fn job_directory_layout() {
    let tmp = TempDir::new().unwrap();
    let (rec, _) = run(tmp.path(), 0.0, "layout");
    let dir = tmp.path().join("jobs/layout");
    let mut files: Vec<String> = walk(&dir).into_iter().map(|p| p.strip_prefix(&dir).unwrap().display().to_string()).collect();
    files.sort();
    let mut expected = vec![MANIFEST.to_string()];
    for i in 0..4 {
        for f in ["deformed.png", "deformed.svg", "depth.png", "score.json", "stylized.png", "textured.png"] {
            expected.push(format!("iter_0/cand_{i}/{f}"));
        }
    }
    expected.sort();
    assert_eq!(files, expected);
    assert_eq!(rec.artifacts().len(), 20);
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn persist_and_load_round_trip() {
    let tmp = TempDir::new().unwrap();
    let (rec, _) = run(tmp.path(), 0.0, "trip");
    let root = tmp.path().join("jobs");
    assert_eq!(load_job(&root, "trip").unwrap(), rec);
    persist_job(&rec, &root).unwrap();
    assert_eq!(load_job(&root, "trip").unwrap(), rec);
}

#[test]
fn damaged_jobs_are_reported() {
    let tmp = TempDir::new().unwrap();
    let (rec, _) = run(tmp.path(), 0.0, "hurt");
    let root = tmp.path().join("jobs");
    assert!(matches!(load_job(&root, "nope"), Err(OrchestratorError::NotFound(_))));
    assert!(matches!(load_job(&root, "../hurt"), Err(OrchestratorError::NotFound(_))));

    let art = root.join("hurt").join(&rec.candidates[1].stylized.path);
    let original = std::fs::read(&art).unwrap();
    std::fs::write(&art, b"not a png").unwrap();
    assert!(matches!(load_job(&root, "hurt"), Err(OrchestratorError::CorruptJob(_))));
    std::fs::write(&art, original).unwrap();

    let manifest = root.join("hurt").join(MANIFEST);
    let bytes = std::fs::read(&manifest).unwrap();
    std::fs::write(&manifest, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_job(&root, "hurt"), Err(OrchestratorError::CorruptJob(_))));
}

#[test]
fn resume_after_crash_repeats_no_backend_call() {
    for (stage, at) in [(Stage::Stylized, 1), (Stage::Scored, 2), (Stage::Textured, 0), (Stage::Planned, 0)] {
        let tmp = TempDir::new().unwrap();
        let opts = options(tmp.path(), 0.0, 10);
        let counting = Arc::new(Counting::default());
        let fired = Arc::new(AtomicBool::new(false));
        let flag = fired.clone();
        let hook = Arc::new(move |e: &StageEvent| {
            e.stage == stage && e.index == at && !flag.swap(true, Ordering::SeqCst)
        });
        let first = Pipeline::new(opts.clone()).with_backends(backends(&counting)).with_stage_hook(hook);
        let rec = first.submit(square_request(), "crash").unwrap();
        assert_eq!(first.run(rec).unwrap_err(), OrchestratorError::Halted, "{stage:?}");
        assert!(!load_job(&opts.job_root, "crash").unwrap().status.is_terminal());

        let second = Pipeline::new(opts.clone()).with_backends(backends(&counting));
        let done = second.resume("crash").unwrap();
        assert_eq!(done.status, JobStatus::Done, "{stage:?}");
        let base = done.directives_history[0].base_seed;
        let all: Vec<u64> = (0..4).map(|i| base + i).collect();
        assert_eq!(sorted(&counting.stylize), all, "{stage:?}");
        assert_eq!(sorted(&counting.texturize), all, "{stage:?}");
        assert_eq!(*counting.scores.lock().unwrap(), 4, "{stage:?}");

        let (clean, _) = run(&tmp.path().join("clean"), 0.0, "crash");
        assert_eq!(done.without_timestamps(), clean.without_timestamps(), "{stage:?}");
        assert_eq!(second.resume("crash").unwrap(), done);
    }
}

#[test]
fn characters_are_gated_together() {
    let tmp = TempDir::new().unwrap();
    let mut opts = options(tmp.path(), 0.0, 3);
    opts.font_dir = None;
    let p = Pipeline::new(opts);
    let rec = p.submit(JobRequest::new("AO", "A cat in jewelry design"), "pair").unwrap();
    let rec = p.run(rec).unwrap();
    assert_eq!(rec.status, JobStatus::Done);
    assert_eq!(rec.candidates.len(), 8);
    let chars: Vec<&str> = rec.candidates.iter().map(|c| c.character.as_str()).collect();
    assert_eq!(chars, ["A", "A", "A", "A", "O", "O", "O", "O"]);
}

#[test]
fn overrides_shape_the_plan() {
    let tmp = TempDir::new().unwrap();
    let counting = Arc::new(Counting::default());
    let p = Pipeline::new(options(tmp.path(), 0.0, 3)).with_backends(backends(&counting));
    let req = JobRequest {
        overrides: Some(json!({ "num_variants": 2, "min_successes_K": 1, "target_shape": "heart" })),
        ..square_request()
    };
    let rec = p.run(p.submit(req, "over").unwrap()).unwrap();
    assert_eq!(rec.candidates.len(), 2);
    assert_eq!(rec.directives_history[0].target_shape, "heart");
}

#[test]
fn bad_requests_are_rejected_before_any_work() {
    let tmp = TempDir::new().unwrap();
    let p = Pipeline::new(options(tmp.path(), 0.0, 3));
    let bad = |req: JobRequest| p.submit(req, "bad").unwrap_err();
    assert!(matches!(bad(JobRequest::new("", "x")), OrchestratorError::InvalidRequest(_)));
    assert!(matches!(bad(JobRequest::new("ABCDEFGHI", "x")), OrchestratorError::InvalidRequest(_)));
    assert_eq!(bad(JobRequest::new("A A", "x")), OrchestratorError::UnmappableCharacter(' '));
    let req = JobRequest {
        font_ref: "../square.ttf".into(),
        ..square_request()
    };
    assert!(matches!(bad(req), OrchestratorError::InvalidRequest(_)));
    assert!(!tmp.path().join("jobs/bad").exists());
}

#[test]
fn failing_backend_ends_in_failed_error() {
    struct Down;
    impl StyleBackend for Down {
        fn stylize(&self, _: &StylizeRequest) -> Result<Image, BackendError> {
            Err(BackendError::Unavailable {
                message: "gpu on fire".into(),
                retryable: false,
            })
        }
        fn texturize(&self, _: &TexturizeRequest) -> Result<Image, BackendError> {
            unreachable!()
        }
    }
    let tmp = TempDir::new().unwrap();
    let p = Pipeline::new(options(tmp.path(), 0.0, 3)).with_backends(Backends {
        style: Arc::new(Down),
        scorer: Arc::new(LegibilityScorer),
        planner: None,
    });
    let rec = p.run(p.submit(square_request(), "down").unwrap()).unwrap();
    assert_eq!(rec.status, JobStatus::FailedError);
    let chain = rec.error.unwrap();
    assert!(chain[0].contains("stylize failed"));
    assert!(chain.iter().any(|s| s.contains("gpu on fire")));
}
