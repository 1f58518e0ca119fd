//! Run manifests: config echo, hashes, timings and the list of outputs.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::config::{parse_config, ExperimentConfig, Kind, LoadedConfig};
use crate::table::{sha256_hex, OutputFile};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

/// How the master seed is split: unit `k` of `units` (an environment
/// realization unless stated otherwise) draws from a seed derived from
/// `(master_seed, stream, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPartition {
    pub master_seed: u64,
    pub units: usize,
    pub scheme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub kind: Kind,
    /// The config file exactly as read.
    pub config_text: String,
    pub config: ExperimentConfig,
    /// SHA-256 of `config_text`.
    pub config_hash: String,
    /// Hash of the config with `seed` and `output` removed; runs sharing it
    /// are repetitions of one experiment.
    pub experiment_key: String,
    pub seed_partition: SeedPartition,
    pub workers: usize,
    pub work_estimate: f64,
    pub wall_clock_seconds: f64,
    pub step_counts: BTreeMap<String, f64>,
    pub outputs: Vec<OutputFile>,
    pub assertions: Vec<Assertion>,
}

impl Manifest {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Recovers the config, checking the echoed text against its hash.
    pub fn loaded_config(&self) -> anyhow::Result<LoadedConfig> {
        let h = sha256_hex(self.config_text.as_bytes());
        if h != self.config_hash {
            bail!("config hash mismatch: manifest records {}, echoed text hashes to {h}", self.config_hash);
        }
        Ok(LoadedConfig {
            text: self.config_text.clone(),
            config: parse_config(&self.config_text)?,
        })
    }

    /// Files under `dir` whose content no longer matches the recorded hash,
    /// with the reason.
    pub fn verify_outputs(&self, dir: &Path) -> Vec<(String, String)> {
        let mut bad = Vec::new();
        for o in &self.outputs {
            let p = dir.join(&o.file);
            match std::fs::read(&p) {
                Ok(bytes) => {
                    let h = sha256_hex(&bytes);
                    if h != o.sha256 {
                        bad.push((p.display().to_string(), format!("sha256 {h} != recorded {}", o.sha256)));
                    }
                }
                Err(e) => bad.push((p.display().to_string(), format!("unreadable: {e}"))),
            }
        }
        bad
    }
}

pub fn experiment_key(config: &ExperimentConfig) -> anyhow::Result<String> {
    let mut v = serde_json::to_value(config)?;
    if let Some(m) = v.as_object_mut() {
        m.remove("seed");
        m.remove("output");
        m.remove("budget");
    }
    Ok(sha256_hex(serde_json::to_string(&v)?.as_bytes()))
}
