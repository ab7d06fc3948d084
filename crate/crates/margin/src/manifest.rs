//! Run manifests: enough to re-run a command and check its outputs.

use std::path::Path;

use anyhow::{Context, Result};
use margin_core::harness::HarnessConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::Command;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL: &str = "margin";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Written next to every run's outputs. Thread count and wall-clock time are
/// left out on purpose: neither may influence the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// The command with input paths made absolute.
    pub command: Command,
    /// Fully resolved settings (defaults, config file and flags merged).
    pub config: HarnessConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    /// Output files relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: Command, config: HarnessConfig) -> Result<Self> {
        let config_sha256 = sha256_hex(&serde_json::to_vec(&config).context("cannot encode settings")?);
        Ok(Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            seed: config.seed,
            config,
            config_sha256,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        let m: Manifest = crate::io::parse_json(&bytes, path, "manifest")?;
        anyhow::ensure!(m.tool == TOOL, "{}: not a {TOOL} manifest", path.display());
        Ok(m)
    }
}
