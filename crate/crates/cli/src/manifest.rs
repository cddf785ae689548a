//! Run manifests: what was run, with which fully resolved settings, producing what.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use dlme::{DlmeError, Result};
use serde::{Deserialize, Serialize};

use crate::jobs::Job;

pub const MANIFEST_FORMAT: &str = "dlme-run-manifest";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub seed: Option<u64>,
    pub git_describe: String,
    pub wall_ms: u128,
    pub outputs: Vec<PathBuf>,
    /// Everything needed to re-run the command, with defaults and config files folded in.
    pub job: Job,
}

impl RunManifest {
    pub fn new(job: &Job, wall_ms: u128) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            command: job.command_name().into(),
            seed: job.seed(),
            git_describe: git_describe(),
            wall_ms,
            outputs: job.outputs(),
            job: job.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DlmeError::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(DlmeError::Config(format!(
                "{} is not a run manifest (format {:?})",
                path.display(),
                m.format
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Writes through a sibling temporary file and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| DlmeError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| DlmeError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| DlmeError::io(path, e))?;
    tmp.persist(path).map_err(|e| DlmeError::io(path, e.error))?;
    Ok(())
}
