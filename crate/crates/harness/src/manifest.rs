//! Sidecar manifests that record what produced each output and its hash.

use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::HarnessError;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A file referenced by a run, with its SHA-256 content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    /// Hashes `path`, recording it relative to `base` when it lies inside.
    pub fn of(path: &Path, base: Option<&Path>) -> Result<Self, HarnessError> {
        let shown = base
            .and_then(|b| path.strip_prefix(b).ok())
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        Ok(Self {
            path: shown,
            sha256: sha256_file(path)?,
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let mut reader = BufReader::new(File::open(path).map_err(|e| HarnessError::io(path, e))?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf).map_err(|e| HarnessError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Fails unless the file at `path` hashes to `expected`.
pub fn verify_hash(path: &Path, expected: &str) -> Result<(), HarnessError> {
    let found = sha256_file(path)?;
    if found.eq_ignore_ascii_case(expected) {
        Ok(())
    } else {
        Err(HarnessError::Hash {
            path: path.display().to_string(),
            expected: expected.to_string(),
            found,
        })
    }
}

/// Provenance record written next to command outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), HarnessError> {
        self.inputs.push(FileRecord::of(path, None)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), HarnessError> {
        self.outputs.push(FileRecord::of(path, None)?);
        Ok(())
    }

    /// Writes the manifest to `<primary>.manifest.json` and returns that path.
    pub fn write_beside(&self, primary: &Path) -> Result<PathBuf, HarnessError> {
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        self.write_to(&path)?;
        Ok(path)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), HarnessError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| HarnessError::json(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::json(path, e))
}
