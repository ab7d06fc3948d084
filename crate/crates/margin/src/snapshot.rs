//! Calibrator state on disk.
//!
//! Floats are written in their shortest round-trip form and read back with
//! exact parsing, so a save/load cycle reproduces every bit of the state.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use margin_core::Pool;

use crate::io::to_json;

pub fn pool_to_json(pool: &Pool) -> Result<String> {
    to_json(pool)
}

pub fn pool_from_json(text: &str) -> Result<Pool> {
    serde_json::from_str(text).context("invalid snapshot")
}

pub fn save_pool(path: &Path, pool: &Pool) -> Result<()> {
    fs::write(path, pool_to_json(pool)?).with_context(|| format!("cannot write {}", path.display()))
}

pub fn load_pool(path: &Path) -> Result<Pool> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    pool_from_json(&text).with_context(|| format!("{}", path.display()))
}
