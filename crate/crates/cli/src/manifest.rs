use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::FileConfig;
use crate::exit::CliError;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// One per run, written next to the outputs as `manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: FileConfig,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub inputs: Vec<InputDigest>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<String>,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Digests a file, or every regular file directly inside a directory.
pub fn digest_path(path: &Path) -> Result<Vec<InputDigest>, CliError> {
    let read = |p: &Path| {
        std::fs::read(p)
            .map(|bytes| InputDigest {
                path: p.display().to_string(),
                sha256: sha256_hex(&bytes),
            })
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", p.display())))
    };
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| CliError::data(format!("cannot list {}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        files.iter().map(|p| read(p)).collect()
    } else {
        Ok(vec![read(path)?])
    }
}

pub struct ManifestBuilder {
    command: String,
    config: FileConfig,
    seed: Option<u64>,
    started: u128,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

impl ManifestBuilder {
    pub fn start(command: &str, config: FileConfig, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config,
            seed,
            started: now_ms(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.extend(digest_path(path)?);
        Ok(())
    }

    /// Writes `bytes` into `path` and records it.
    pub fn output(&mut self, path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        write_file(path, bytes.as_ref())?;
        self.record(path);
        Ok(())
    }

    pub fn record(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn finish(self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            outputs: self.outputs,
        };
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| {
            CliError::new(
                crate::exit::OTHER,
                format!("cannot create {}: {e}", parent.display()),
            )
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| {
        CliError::new(
            crate::exit::OTHER,
            format!("cannot write {}: {e}", path.display()),
        )
    })
}
