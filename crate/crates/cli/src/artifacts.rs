use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Writes a file by filling a temporary sibling and renaming it into place.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::internal(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .map_err(|e| CliError::internal(format!("cannot create temporary file in {}: {e}", dir.display())))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush().map_err(|e| CliError::internal(format!("write {}: {e}", path.display())))?;
    }
    tmp.persist(path)
        .map_err(|e| CliError::internal(format!("cannot move output into {}: {e}", path.display())))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::internal(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::internal(e.to_string()))
    })
}

pub fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `dir/name.csv` → `dir/name.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub elapsed_seconds: f64,
    pub tool_version: String,
}

/// Collects what a command read and wrote; `finish` writes the manifest.
pub struct Run {
    command: String,
    started: Instant,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    config_sha256: String,
}

impl Run {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config_sha256: sha256_hex(b"null"),
        }
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = read_input(path)?;
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> Result<(), CliError> {
        let text = serde_json::to_vec(config).map_err(|e| CliError::internal(e.to_string()))?;
        self.config_sha256 = sha256_hex(&text);
        Ok(())
    }

    pub fn wrote(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn finish(self, manifest_path: &Path) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: self.command,
            config_sha256: self.config_sha256,
            inputs: self.inputs,
            outputs: self.outputs,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        write_json(manifest_path, &manifest)
    }
}
