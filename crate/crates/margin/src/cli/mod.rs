//! The `margin` command line.
//!
//! Every command resolves its settings (defaults, then `--config`, then
//! flags), validates them, writes its reports into `--out` and finishes with
//! a manifest from which `margin report` can re-run it.

mod commands;
mod settings;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use margin_core::harness::HarnessConfig;
use margin_core::{ConfidenceChannel, PriorSource};
use serde::{Deserialize, Serialize};

use crate::exec::RayonExecutor;
use crate::io::OutputDir;
use crate::manifest::{FileDigest, Manifest, MANIFEST_FILE};

pub use commands::execute;
pub use settings::{resolve, Overrides};

#[derive(Debug, Parser)]
#[command(name = "margin", version, about = "Online confidence calibration for agent pools")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Directory for reports and the run manifest.
    #[arg(long, global = true, env = "MARGIN_OUT_DIR", default_value = "margin-out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core. Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// JSON file with default values for any of the tuning flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Monte-Carlo checks of the estimator's closed-form behaviour.
    Verify(VerifyArgs),
    /// Generate a synthetic log from a scenario file and replay it.
    Simulate(SimulateArgs),
    /// Two-phase shift protocol over a log.
    Replay(ReplayArgs),
    /// Apply factors learned on one log to another.
    Transfer(TransferArgs),
    /// Replay a synthetic stream while agents leave, join or rotate.
    DynamicPool(DynamicPoolArgs),
    /// Sweep one hyperparameter over shift conditions.
    Ablate(AblateArgs),
    /// Re-run a manifest and compare every output byte for byte.
    Report(ReportArgs),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct VerifyArgs {
    /// Run every check (the default).
    #[arg(long, conflicts_with = "prop")]
    pub all: bool,
    /// Run a single check, 1 to 6.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
    pub prop: Option<u8>,
    /// Accuracy for checks 2 and 5.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Rate after a correct outcome, check 5.
    #[arg(long)]
    pub up: Option<f64>,
    /// Rate after an incorrect outcome, check 5.
    #[arg(long)]
    pub down: Option<f64>,
    /// Monte-Carlo replications per check.
    #[arg(long)]
    pub replications: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct SimulateArgs {
    /// Scenario file describing the synthetic stream.
    #[arg(long)]
    pub spec: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    #[default]
    Verbalized,
    Consistency,
}

impl From<Channel> for ConfidenceChannel {
    fn from(c: Channel) -> Self {
        match c {
            Channel::Verbalized => ConfidenceChannel::Verbalized,
            Channel::Consistency => ConfidenceChannel::Consistency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    Model,
    Pool,
}

impl From<Prior> for PriorSource {
    fn from(p: Prior) -> Self {
        match p {
            Prior::Model => PriorSource::ModelLevel,
            Prior::Pool => PriorSource::PoolLevel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct ReplayArgs {
    /// JSON-lines observation log.
    #[arg(long)]
    pub log: PathBuf,
    /// Phase tag of the records calibrators learn from.
    #[arg(long)]
    pub phase1: String,
    /// Phase tag of the records that are scored.
    #[arg(long)]
    pub phase2: String,
    /// Which confidence signal to calibrate.
    #[arg(long, value_enum, default_value_t = Channel::Verbalized)]
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct TransferArgs {
    /// Log the factors are learned on.
    #[arg(long)]
    pub source: PathBuf,
    /// Log they are applied to.
    #[arg(long)]
    pub target: PathBuf,
    /// Which confidence signal to calibrate.
    #[arg(long, value_enum, default_value_t = Channel::Verbalized)]
    pub channel: Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Dropout,
    Coldstart,
    Rolling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct DynamicPoolArgs {
    /// Pool change to simulate.
    #[arg(long, value_enum)]
    pub scenario: ScenarioName,
    /// Scenario file describing the synthetic stream.
    #[arg(long)]
    pub spec: PathBuf,
    /// Tasks replayed per shuffle.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Trailing window, in tasks, of the windowed ECE.
    #[arg(long, default_value_t = 50)]
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct AblateArgs {
    /// Grid file: one swept setting and the conditions to run it on.
    #[arg(long)]
    pub grid: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct ReportArgs {
    /// manifest.json written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Verify(_) => "verify",
            Command::Simulate(_) => "simulate",
            Command::Replay(_) => "replay",
            Command::Transfer(_) => "transfer",
            Command::DynamicPool(_) => "dynamic-pool",
            Command::Ablate(_) => "ablate",
            Command::Report(_) => "report",
        }
    }

    /// Makes every input path absolute so the command can be re-run from
    /// anywhere. Fails, naming the path, if an input does not exist.
    fn absolutize(&mut self) -> Result<()> {
        let paths: Vec<&mut PathBuf> = match self {
            Command::Verify(_) => vec![],
            Command::Simulate(a) => vec![&mut a.spec],
            Command::Replay(a) => vec![&mut a.log],
            Command::Transfer(a) => vec![&mut a.source, &mut a.target],
            Command::DynamicPool(a) => vec![&mut a.spec],
            Command::Ablate(a) => vec![&mut a.grid],
            Command::Report(a) => vec![&mut a.manifest],
        };
        for p in paths {
            *p = absolute(p)?;
        }
        Ok(())
    }
}

pub(crate) fn absolute(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path).with_context(|| format!("cannot open {}", path.display()))
}

/// Whether every check in a run held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Passed,
    Failed,
}

impl Status {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Passed
        } else {
            Status::Failed
        }
    }

    pub fn and(self, other: Status) -> Status {
        Status::from_pass(self == Status::Passed && other == Status::Passed)
    }
}

/// Runs a parsed command line. `Err` maps to exit code 1, a failed check
/// to exit code 2.
pub fn run(cli: Cli) -> Result<Status> {
    let Cli { common, mut command } = cli;
    if let Command::Report(args) = &command {
        return report(&args.manifest, &common);
    }
    let config = resolve(&command, &common)?;
    commands::validate(&command)?;
    command.absolutize()?;
    let exec = RayonExecutor::new(common.jobs)?;
    run_into(&command, config, &common.out, &exec)
}

/// Executes `command` into `out` and writes its manifest.
pub fn run_into(
    command: &Command,
    config: HarnessConfig,
    out: &Path,
    exec: &RayonExecutor,
) -> Result<Status> {
    let mut dir = OutputDir::create(out)?;
    let mut manifest = Manifest::new(command.clone(), config)?;
    let mut ctx = commands::Context::new(config, &mut dir, exec);
    let status = execute(command, &mut ctx)?;
    manifest.inputs = ctx.into_inputs();
    for name in dir.files() {
        let bytes = std::fs::read(dir.root().join(name))
            .with_context(|| format!("cannot read back {name}"))?;
        manifest.outputs.push(FileDigest {
            path: name.clone(),
            sha256: crate::manifest::sha256_hex(&bytes),
        });
    }
    manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
    let text = crate::io::to_json(&manifest)?;
    std::fs::write(out.join(MANIFEST_FILE), text)
        .with_context(|| format!("cannot write {}", out.join(MANIFEST_FILE).display()))?;
    Ok(status)
}

fn report(manifest_path: &Path, common: &Common) -> Result<Status> {
    let manifest_path = absolute(manifest_path)?;
    let manifest = Manifest::load(&manifest_path)?;
    if manifest.command.name() == "report" {
        bail!("{}: a report run has no manifest of its own", manifest_path.display());
    }
    if manifest.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "warning: manifest written by version {}, running {}",
            manifest.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    for input in &manifest.inputs {
        let bytes = std::fs::read(&input.path).with_context(|| format!("cannot read input {}", input.path))?;
        if crate::manifest::sha256_hex(&bytes) != input.sha256 {
            bail!("input {} changed since the manifest was written", input.path);
        }
    }
    let source_dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = common.out.clone();
    if std::fs::canonicalize(&out).is_ok_and(|o| o == source_dir) {
        out = out.join("rerun");
    }
    let exec = RayonExecutor::new(common.jobs)?;
    run_into(&manifest.command, manifest.config, &out, &exec)?;
    let rerun = Manifest::load(&out.join(MANIFEST_FILE))?;
    let mut status = Status::Passed;
    for expected in &manifest.outputs {
        let found = rerun.outputs.iter().find(|d| d.path == expected.path);
        let same = found.is_some_and(|d| d.sha256 == expected.sha256);
        println!("{} {}", if same { "match   " } else { "MISMATCH" }, expected.path);
        if !same {
            status = Status::Failed;
        }
    }
    for extra in rerun.outputs.iter().filter(|d| !manifest.outputs.iter().any(|e| e.path == d.path)) {
        println!("EXTRA    {}", extra.path);
        status = Status::Failed;
    }
    println!("re-run written to {}", out.display());
    Ok(status)
}
