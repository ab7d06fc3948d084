use anyhow::{Context, Result};
use clap::Args;
use margin_core::harness::HarnessConfig;
use serde::{Deserialize, Serialize};

use super::{Command, Common, Prior};

/// Tuning values accepted both as flags and as keys of a `--config` file.
/// Flags win over the file; the file wins over built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Master seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Learning rate for both outcomes.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Learning rate after a correct outcome (overrides --alpha).
    #[arg(long, global = true)]
    pub alpha_up: Option<f64>,
    /// Learning rate after an incorrect outcome (overrides --alpha).
    #[arg(long, global = true)]
    pub alpha_down: Option<f64>,
    /// Number of confidence bands.
    #[arg(long, global = true)]
    pub bands: Option<usize>,
    /// Shrinkage constant; 0 disables blending.
    #[arg(long, global = true)]
    pub shrinkage: Option<f64>,
    /// Prior that sparse bands shrink toward.
    #[arg(long, global = true, value_enum)]
    pub prior: Option<Prior>,
    /// Shuffled replays (or repetitions) per protocol.
    #[arg(long, global = true)]
    pub shuffles: Option<usize>,
    /// Equal-width bins for ECE and reliability tables.
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    /// Bootstrap resamples per interval.
    #[arg(long, global = true)]
    pub resamples: Option<usize>,
}

impl Overrides {
    fn or(self, base: Overrides) -> Overrides {
        Overrides {
            seed: self.seed.or(base.seed),
            alpha: self.alpha.or(base.alpha),
            alpha_up: self.alpha_up.or(base.alpha_up),
            alpha_down: self.alpha_down.or(base.alpha_down),
            bands: self.bands.or(base.bands),
            shrinkage: self.shrinkage.or(base.shrinkage),
            prior: self.prior.or(base.prior),
            shuffles: self.shuffles.or(base.shuffles),
            bins: self.bins.or(base.bins),
            resamples: self.resamples.or(base.resamples),
        }
    }
}

fn default_shuffles(command: &Command) -> usize {
    match command {
        Command::DynamicPool(_) => 50,
        _ => 100,
    }
}

/// Merges defaults, the config file and flags, then validates the result.
pub fn resolve(command: &Command, common: &Common) -> Result<HarnessConfig> {
    let file = match &common.config {
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
            crate::io::parse_json::<Overrides>(&bytes, path, "config file")?
        }
        None => Overrides::default(),
    };
    let o = common.overrides.clone().or(file);
    let mut cfg = HarnessConfig {
        shuffles: default_shuffles(command),
        ..HarnessConfig::default()
    };
    if let Some(a) = o.alpha {
        cfg.calibrator = cfg.calibrator.with_rates(a, a);
    }
    if let Some(a) = o.alpha_up {
        cfg.calibrator.alpha_up = a;
    }
    if let Some(a) = o.alpha_down {
        cfg.calibrator.alpha_down = a;
    }
    if let Some(k) = o.bands {
        cfg.calibrator.band_count = k;
    }
    if let Some(k) = o.shrinkage {
        cfg.calibrator.shrinkage = k;
    }
    if let Some(p) = o.prior {
        cfg.calibrator.prior_source = p.into();
    }
    if let Some(s) = o.shuffles {
        cfg.shuffles = s;
    }
    if let Some(b) = o.bins {
        cfg.ece_bins = b;
    }
    if let Some(b) = o.resamples {
        cfg.resamples = b;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    cfg.validate().context("invalid settings")?;
    Ok(cfg)
}
