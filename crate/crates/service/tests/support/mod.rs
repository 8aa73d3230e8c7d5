//! In-process server, HTTP client and schema helpers for service tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::Value;
use ureq::Agent;
use wordart_core::orchestrator::{Backends, PipelineOptions};
use wordart_service::api::{router, AppState};

pub const SQUARE_TTF: &[u8] = include_bytes!("../../../core/tests/fixtures/square.ttf");

/// Options with reduced optimization steps and the square test font in the
/// font directory.
pub fn options(root: &Path, steps: usize) -> PipelineOptions {
    let fonts = root.join("fonts");
    std::fs::create_dir_all(&fonts).unwrap();
    std::fs::write(fonts.join("square.ttf"), SQUARE_TTF).unwrap();
    let mut o = PipelineOptions::new(root.join("jobs"));
    o.font_dir = Some(fonts);
    o.workers = 2;
    o.settings.deform.steps = steps;
    o
}

pub struct TestServer {
    pub base: String,
    pub addr: std::net::SocketAddr,
    pub job_root: PathBuf,
    agent: Agent,
}

impl TestServer {
    pub fn start(options: PipelineOptions, backends: Option<Backends>) -> Self {
        let job_root = options.job_root.clone();
        std::fs::create_dir_all(&job_root).unwrap();
        let mut state = AppState::new(options, "mock").with_id_seed(7);
        if let Some(b) = backends {
            state = state.with_backends(b);
        }
        let std_listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        std_listener.set_nonblocking(true).unwrap();
        let addr = std_listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).unwrap();
                axum::serve(listener, router(Arc::new(state))).await.unwrap();
            });
        });
        let agent: Agent = Agent::config_builder().http_status_as_error(false).build().into();
        Self {
            base: format!("http://{addr}"),
            addr,
            job_root,
            agent,
        }
    }

    pub fn get(&self, path: &str) -> (u16, Option<String>, Vec<u8>) {
        let mut resp = self.agent.get(&format!("{}{path}", self.base)).call().unwrap();
        let ct = resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_string());
        (resp.status().as_u16(), ct, resp.body_mut().read_to_vec().unwrap())
    }

    pub fn get_json(&self, path: &str) -> (u16, Value) {
        let (status, _, body) = self.get(path);
        (status, serde_json::from_slice(&body).unwrap())
    }

    pub fn post_raw(&self, path: &str, body: &str) -> (u16, Value) {
        let mut resp = self
            .agent
            .post(&format!("{}{path}", self.base))
            .header("Content-Type", "application/json")
            .send(body)
            .unwrap();
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap();
        (status, serde_json::from_str(&text).unwrap())
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        self.post_raw(path, &body.to_string())
    }

    /// Polls a job until it reaches a terminal status.
    pub fn wait(&self, id: &str, timeout: Duration) -> Value {
        let start = Instant::now();
        loop {
            let (status, v) = self.get_json(&format!("/api/jobs/{id}"));
            if status == 200 && matches!(v["status"].as_str(), Some("done" | "failed_budget" | "failed_error")) {
                return v;
            }
            assert!(start.elapsed() < timeout, "job {id} still {:?} after {timeout:?}", v["status"]);
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

pub fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Panics with every validation error when `instance` does not match.
pub fn assert_schema(name: &str, instance: &Value) {
    let validator = jsonschema::validator_for(&schema(name)).unwrap();
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| format!("{}: {e}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}
