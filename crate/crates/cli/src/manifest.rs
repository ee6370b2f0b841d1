//! Provenance sidecars written next to every output file.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 over the command, every output-affecting option and the
    /// bytes of every input file.
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Accumulates the digest of one run.
pub struct DigestBuilder {
    hasher: Sha256,
    inputs: Vec<String>,
}

impl DigestBuilder {
    pub fn new(command: &str, options: &impl Serialize) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        hasher.update([0]);
        hasher.update(serde_json::to_vec(options).expect("options serialize"));
        Self { hasher, inputs: Vec::new() }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.hasher.update((name.len() as u64).to_le_bytes());
        self.hasher.update(name.as_bytes());
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
        self.inputs.push(path.display().to_string());
    }

    pub fn finish(self, command: &str, seed: u64, started: f64, outputs: &[PathBuf]) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config_digest: format!("{:x}", self.hasher.finalize()),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_s: started,
            finished_unix_s: unix_now(),
            inputs: self.inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }
}

/// `<out>.manifest.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn write_manifest(out: &Path, manifest: &RunManifest) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(sidecar_path(out), text + "\n")
}
