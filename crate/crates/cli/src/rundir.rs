//! Run-directory bookkeeping: the config snapshot, the run record, and
//! digest helpers.
//!
//! Every command that takes a config executes inside a run directory. The
//! directory receives a snapshot of the fully resolved configuration and a
//! `run.json` record that moves from `running` to `finished` or `failed`.
//! A finished run directory is never reused.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hasa_core::error::{Error, Result};
use hasa_core::signal::PIPELINE_VERSION;

use crate::config::RunConfig;

pub const RUN_RECORD_FILE: &str = "run.json";
pub const CONFIG_SNAPSHOT_FILE: &str = "config.toml";

pub const STATUS_RUNNING: &str = "running";
pub const STATUS_FINISHED: &str = "finished";
pub const STATUS_FAILED: &str = "failed";

/// What happened in one run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    /// Directory name of the run.
    pub run_id: String,
    pub command: String,
    pub pipeline_version: String,
    /// Digest of the config snapshot written next to this record.
    pub config_sha256: String,
    pub seed: u64,
    pub started_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub finished_unix: Option<u64>,
    pub status: String,
    /// Artifact paths relative to the run directory, or absolute when a
    /// command writes outside it (prepare's dataset files).
    pub artifacts: Vec<String>,
}

impl RunRecord {
    pub fn read(dir: &Path) -> Result<RunRecord> {
        let bytes = fs::read(dir.join(RUN_RECORD_FILE))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// A run directory holding an in-flight record.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    record: RunRecord,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunDir {
    /// Create (or reopen a non-finalized) run directory, snapshot the
    /// resolved config, and write a `running` record.
    pub fn create(command: &str, config: &RunConfig) -> Result<RunDir> {
        let path = config.out_dir()?.to_path_buf();
        if path.join(RUN_RECORD_FILE).is_file() {
            let previous = RunRecord::read(&path)?;
            if previous.status == STATUS_FINISHED {
                return Err(Error::InvalidInput(format!(
                    "run directory {} already holds a finished {} run; choose a fresh --out",
                    path.display(),
                    previous.command
                )));
            }
        }
        fs::create_dir_all(&path)?;

        let snapshot = toml::to_string_pretty(config)
            .map_err(|e| Error::InvalidInput(format!("cannot snapshot config: {e}")))?;
        fs::write(path.join(CONFIG_SNAPSHOT_FILE), &snapshot)?;

        let run_id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let record = RunRecord {
            run_id,
            command: command.to_string(),
            pipeline_version: PIPELINE_VERSION.to_string(),
            config_sha256: sha256_hex(snapshot.as_bytes()),
            seed: config.seed,
            started_unix: now_unix(),
            finished_unix: None,
            status: STATUS_RUNNING.to_string(),
            artifacts: Vec::new(),
        };
        let dir = RunDir { path, record };
        dir.write_record()?;
        Ok(dir)
    }

    fn write_record(&self) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.record)?;
        fs::write(self.path.join(RUN_RECORD_FILE), json)?;
        Ok(())
    }

    /// Mark the run finished with its artifact list.
    pub fn finish(mut self, artifacts: Vec<String>) -> Result<()> {
        self.record.status = STATUS_FINISHED.to_string();
        self.record.finished_unix = Some(now_unix());
        self.record.artifacts = artifacts;
        self.write_record()
    }

    /// Best-effort `failed` mark; the original error stays primary.
    pub fn fail(mut self) {
        self.record.status = STATUS_FAILED.to_string();
        self.record.finished_unix = Some(now_unix());
        let _ = self.write_record();
    }

    /// Run a command body, finalizing the record either way.
    pub fn execute(self, body: impl FnOnce(&Path) -> Result<Vec<String>>) -> Result<()> {
        match body(&self.path.clone()) {
            Ok(artifacts) => self.finish(artifacts),
            Err(err) => {
                self.fail();
                Err(err)
            }
        }
    }
}
