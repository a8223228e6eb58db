//! Provenance record written next to every output set.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    /// SHA-256 of the compact JSON form of `scenario`.
    pub scenario_digest: String,
    pub seed: u64,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<PathBuf>,
    pub scenario: Value,
}

pub fn digest(scenario: &Value) -> String {
    let text = serde_json::to_string(scenario).expect("JSON values always serialize");
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

impl RunManifest {
    pub fn new(command: &str, scenario: Value, seed: u64, started_at: String) -> Self {
        Self {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario_digest: digest(&scenario),
            seed,
            threads: rayon::current_num_threads(),
            started_at,
            finished_at: String::new(),
            outputs: Vec::new(),
            scenario,
        }
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Writes `text` to `dir/name` and records the path.
pub fn write_output(
    dir: &Path,
    name: &str,
    text: &str,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, text)
        .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))?;
    manifest.outputs.push(path);
    Ok(())
}

pub fn finish(dir: &Path, mut manifest: RunManifest) -> Result<(), CliError> {
    let path = dir.join("manifest.json");
    manifest.outputs.push(path.clone());
    manifest.finished_at = now();
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text)
        .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))
}
