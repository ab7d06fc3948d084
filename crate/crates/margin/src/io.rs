//! Observation logs in, JSON reports and CSV series out.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use margin_core::metrics::ReliabilityBins;
use margin_core::Observation;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Reads a JSON-lines log. See [`parse_observations`].
pub fn read_observations(path: &Path) -> Result<Vec<Observation>> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_observations(&bytes, path)
}

/// Parses one record per line. Blank lines are skipped; anything else that
/// fails to parse or validate is reported with its 1-based line number.
pub fn parse_observations(bytes: &[u8], path: &Path) -> Result<Vec<Observation>> {
    let text = std::str::from_utf8(bytes).with_context(|| format!("{}: not UTF-8", path.display()))?;
    let mut out = Vec::new();
    let mut first_seen: HashMap<(String, String), usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let at = || format!("{}:{line_no}", path.display());
        if line.trim().is_empty() {
            continue;
        }
        let obs: Observation =
            serde_json::from_str(line).with_context(|| format!("{}: malformed record", at()))?;
        if obs.agent.is_empty() {
            bail!("{}: field `agent` is empty", at());
        }
        if obs.task.is_empty() {
            bail!("{}: field `task` is empty", at());
        }
        if !(0.0..=1.0).contains(&obs.confidence) {
            bail!("{}: field `confidence` is {}, outside [0, 1]", at(), obs.confidence);
        }
        if obs.consistency_samples.as_ref().is_some_and(|s| s.is_empty()) {
            bail!("{}: field `consistency_samples` is empty", at());
        }
        let key = (obs.agent.clone(), obs.task.clone());
        if let Some(prev) = first_seen.insert(key, line_no) {
            bail!(
                "{}: duplicate record for agent {} on task {} (first at line {prev})",
                at(),
                obs.agent,
                obs.task
            );
        }
        out.push(obs);
    }
    if out.is_empty() {
        bail!("{}: no observations", path.display());
    }
    Ok(out)
}

/// Parses a JSON document, naming the file and `what` on failure.
pub fn parse_json<T: DeserializeOwned>(bytes: &[u8], path: &Path, what: &str) -> Result<T> {
    serde_json::from_slice(bytes).with_context(|| format!("{}: invalid {what}", path.display()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).context("cannot encode JSON")?;
    s.push('\n');
    Ok(s)
}

/// Header and rows of a reliability diagram.
pub fn reliability_table(bins: &ReliabilityBins) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["bin_low", "bin_high", "count", "mean_conf", "mean_acc"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = bins
        .bins
        .iter()
        .map(|b| {
            vec![
                b.low.to_string(),
                b.high.to_string(),
                b.count.to_string(),
                b.mean_confidence.to_string(),
                b.mean_accuracy.to_string(),
            ]
        })
        .collect();
    (header, rows)
}

/// An output directory that remembers every file written into it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)
            .with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Names of the files written so far, in write order.
    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = to_json(value)?;
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_jsonl(&mut self, name: &str, records: &[Observation]) -> Result<()> {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r).context("cannot encode record")?);
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().context("cannot encode CSV")?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_reliability(&mut self, name: &str, bins: &ReliabilityBins) -> Result<()> {
        let (header, rows) = reliability_table(bins);
        self.write_csv(name, &header, &rows)
    }
}
