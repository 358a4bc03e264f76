//! Run manifests written beside every artifact-producing command's
//! outputs: command, config hash, seed, paths, version, wall-clock time.

use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub duration_ms: u128,
}

pub struct ManifestBuilder {
    command: String,
    seed: u64,
    config_hash: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

/// 64-bit FNV-1a over the canonical config string.
fn fnv1a(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{h:016x}")
}

impl ManifestBuilder {
    pub fn start(command: &str, seed: u64) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            seed,
            config_hash: fnv1a(""),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, canonical: &str) {
        self.config_hash = fnv1a(canonical);
    }

    pub fn inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) {
        self.inputs.extend(paths.into_iter().cloned());
    }

    pub fn outputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) {
        self.outputs.extend(paths.into_iter().cloned());
    }

    pub fn write(self, path: &Path) -> Result<(), coman::Error> {
        let doc = RunManifest {
            command: self.command,
            version: format!("coman-cli-v{}", env!("CARGO_PKG_VERSION")),
            seed: self.seed,
            config_hash: self.config_hash,
            inputs: self
                .inputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            duration_ms: self.started.elapsed().as_millis(),
        };
        std::fs::write(
            path,
            serde_json::to_string_pretty(&doc).expect("manifest serializes") + "\n",
        )
        .map_err(|e| coman::Error::io(path.display().to_string(), e))
    }
}
