//! Run manifest: configuration hash, component versions, stage timings and
//! the artifact inventory. The manifest is bookkeeping, not a report: it is
//! the one output file allowed to differ between reruns (timings).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub config_sha256: String,
    pub versions: BTreeMap<String, String>,
    /// Stage name -> wall-clock seconds of the most recent run.
    pub timings: BTreeMap<String, f64>,
    /// Artifact paths relative to the run directory.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(config_bytes: &[u8]) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert("core".to_string(), windconflict_core::VERSION.to_string());
        Self {
            config_sha256: hex_sha256(config_bytes),
            versions,
            timings: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    /// Loads the manifest from `run_dir`, or starts a fresh one if absent
    /// or left by a different configuration.
    pub fn load_or_new(run_dir: &Path, config_bytes: &[u8]) -> Self {
        let fresh = Self::new(config_bytes);
        let path = run_dir.join(MANIFEST_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => match serde_json::from_str::<RunManifest>(&text) {
                Ok(existing) if existing.config_sha256 == fresh.config_sha256 => existing,
                _ => fresh,
            },
            Err(_) => fresh,
        }
    }

    pub fn record_stage(&mut self, stage: &str, seconds: f64) {
        self.timings.insert(stage.to_string(), seconds);
    }

    pub fn record_artifact(&mut self, rel_path: &str) {
        if !self.artifacts.iter().any(|p| p == rel_path) {
            self.artifacts.push(rel_path.to_string());
        }
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), CliError> {
        let path = run_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::data("manifest serialization", e))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::data("manifest write", e))?;
        // Every artifact the manifest advertises must exist.
        for rel in &self.artifacts {
            let p = run_dir.join(rel);
            if !p.exists() {
                return Err(CliError::Data(format!(
                    "manifest lists missing artifact {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn relative_to(run_dir: &Path, path: &Path) -> String {
    path.strip_prefix(run_dir)
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .unwrap_or_else(|_| path.to_string_lossy().into_owned())
}

#[allow(dead_code)]
pub fn artifact_path(run_dir: &Path, rel: &str) -> PathBuf {
    run_dir.join(rel)
}
