//! On-disk job layout:
//!
//! ```text
//! <root>/<job_id>/job.json
//! <root>/<job_id>/iter_<j>/cand_<i>/{deformed.svg, deformed.png, depth.png, stylized.png, score.json, textured.png}
//! ```

use std::fs;
use std::io::ErrorKind;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{JobRecord, OrchestratorError};

pub const MANIFEST: &str = "job.json";

/// A file inside a job directory, by relative path and content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

pub fn candidate_dir(iteration: usize, index: usize) -> String {
    format!("iter_{iteration}/cand_{index}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Job ids are 1–64 characters of `[A-Za-z0-9_-]`.
pub fn is_valid_job_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

pub fn job_dir(root: &Path, id: &str) -> Result<PathBuf, OrchestratorError> {
    if !is_valid_job_id(id) {
        return Err(OrchestratorError::NotFound(format!("invalid job id {id:?}")));
    }
    Ok(root.join(id))
}

/// Resolves a relative artifact path inside a job directory. Absolute
/// paths and any `..`, root or prefix component are rejected.
pub fn resolve_artifact(job_dir: &Path, rel: &str) -> Option<PathBuf> {
    let p = Path::new(rel);
    if rel.is_empty() || rel.contains('\\') || p.is_absolute() {
        return None;
    }
    let mut out = job_dir.to_path_buf();
    for c in p.components() {
        match c {
            Component::Normal(s) => out.push(s),
            Component::CurDir => {}
            _ => return None,
        }
    }
    Some(out)
}

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> OrchestratorError {
    OrchestratorError::Io(format!("{}: {e}", path.display()))
}

/// Write-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), OrchestratorError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Writes `bytes` to `<job_dir>/<rel>` and returns its reference.
pub fn write_artifact(job_dir: &Path, rel: &str, bytes: &[u8]) -> Result<ArtifactRef, OrchestratorError> {
    let path = resolve_artifact(job_dir, rel).ok_or_else(|| OrchestratorError::Io(format!("bad artifact path {rel:?}")))?;
    write_atomic(&path, bytes)?;
    Ok(ArtifactRef {
        path: rel.to_string(),
        sha256: sha256_hex(bytes),
    })
}

/// Reads an artifact if it exists; `Ok(None)` when absent.
pub fn read_artifact(job_dir: &Path, rel: &str) -> Result<Option<Vec<u8>>, OrchestratorError> {
    let Some(path) = resolve_artifact(job_dir, rel) else {
        return Ok(None);
    };
    match fs::read(&path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&path, e)),
    }
}

/// Writes the manifest. Artifacts are written as they are produced and are
/// not touched here.
pub fn persist_job(record: &JobRecord, root: &Path) -> Result<(), OrchestratorError> {
    let dir = job_dir(root, &record.id)?;
    let json = serde_json::to_vec_pretty(record).map_err(|e| OrchestratorError::Io(e.to_string()))?;
    write_atomic(&dir.join(MANIFEST), &json)
}

/// Reads a manifest and checks every referenced artifact against its hash.
pub fn load_job(root: &Path, id: &str) -> Result<JobRecord, OrchestratorError> {
    let dir = job_dir(root, id)?;
    let path = dir.join(MANIFEST);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == ErrorKind::NotFound => return Err(OrchestratorError::NotFound(id.to_string())),
        Err(e) => return Err(io_err(&path, e)),
    };
    let record: JobRecord =
        serde_json::from_slice(&bytes).map_err(|e| OrchestratorError::CorruptJob(format!("{}: {e}", path.display())))?;
    if record.id != id {
        return Err(OrchestratorError::CorruptJob(format!("manifest id {:?} does not match {id:?}", record.id)));
    }
    for art in record.artifacts() {
        match read_artifact(&dir, &art.path)? {
            Some(b) if sha256_hex(&b) == art.sha256 => {}
            Some(_) => return Err(OrchestratorError::CorruptJob(format!("{} does not match its recorded hash", art.path))),
            None => return Err(OrchestratorError::CorruptJob(format!("{} is missing", art.path))),
        }
    }
    Ok(record)
}
