//! Service configuration: one flat TOML document whose keys are exactly the
//! fields below. `WORDART_CONFIG` names the file when no path is given.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wordart_core::genbackends::DEFAULT_THRESHOLD;
use wordart_core::orchestrator::{BackendSpec, PipelineOptions, DEFAULT_WORKERS, MOCK_BACKEND};

pub const CONFIG_ENV: &str = "WORDART_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub listen: String,
    pub job_root: PathBuf,
    pub font_dir: Option<PathBuf>,
    /// `"mock"` or the base URL of a backend service.
    pub backend: String,
    pub worker_pool_size: usize,
    pub threshold: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            job_root: PathBuf::from("jobs"),
            font_dir: None,
            backend: MOCK_BACKEND.into(),
            worker_pool_size: DEFAULT_WORKERS,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: ServiceConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or the file named by `WORDART_CONFIG`, or returns the
    /// defaults when neither is present.
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match path.map(Path::to_path_buf).or(from_env) {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                Self::from_toml(&text).map_err(|e| format!("{}: {e}", p.display()))
            }
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.worker_pool_size < 1 {
            return Err("worker_pool_size must be at least 1".into());
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(format!("threshold {} must be a non-negative number", self.threshold));
        }
        BackendSpec::parse(&self.backend)?;
        Ok(())
    }

    /// Creates the job root (and checks the font directory).
    pub fn prepare_dirs(&self) -> Result<(), String> {
        std::fs::create_dir_all(&self.job_root).map_err(|e| format!("{}: {e}", self.job_root.display()))?;
        if let Some(dir) = &self.font_dir {
            if !dir.is_dir() {
                return Err(format!("font_dir {} is not a directory", dir.display()));
            }
        }
        Ok(())
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        let mut opts = PipelineOptions::new(&self.job_root);
        opts.font_dir = self.font_dir.clone();
        opts.workers = self.worker_pool_size;
        opts.settings.threshold = self.threshold;
        opts
    }
}
