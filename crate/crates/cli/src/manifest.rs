use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Written next to the outputs of every run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub args: Vec<String>,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    /// Hash over the input hashes, so a run can be matched to its data.
    pub content_hash: String,
    pub started: String,
    pub finished: String,
}

/// Git-style blob hash: `sha256("blob <len>\0" ‖ content)`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub struct ManifestBuilder {
    command: String,
    config: Option<String>,
    seed: Option<u64>,
    inputs: Vec<InputFile>,
    outputs: Vec<PathBuf>,
    started: chrono::DateTime<chrono::Utc>,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        ManifestBuilder {
            command: command.into(),
            config: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: chrono::Utc::now(),
        }
    }

    pub fn config(&mut self, path: &Path) -> Result<()> {
        self.config = Some(path.display().to_string());
        self.input(path)
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.push(InputFile { path: path.display().to_string(), sha256: blob_hash(&bytes) });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let mut combined = Sha256::new();
        for i in &self.inputs {
            combined.update(i.sha256.as_bytes());
        }
        let m = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").into(),
            args: std::env::args().collect(),
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            content_hash: hex::encode(combined.finalize()),
            started: self.started.to_rfc3339(),
            finished: chrono::Utc::now().to_rfc3339(),
        };
        let text = toml::to_string(&m).context("cannot serialize the run manifest")?;
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_is_content_addressed() {
        assert_eq!(blob_hash(b"abc"), blob_hash(b"abc"));
        assert_ne!(blob_hash(b"abc"), blob_hash(b"abd"));
        assert_eq!(blob_hash(b"").len(), 64);
    }
}
