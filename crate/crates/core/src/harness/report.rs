use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_mean_ci, paired_bootstrap};
use super::HarnessConfig;
use crate::error::Result;
use crate::rng::derive_seed;
use crate::stats::{mean, std_dev};

/// Mean, standard deviation and 95% bootstrap interval over shuffles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MetricSummary {
    /// Summarizes per-shuffle values; the interval's resampler is keyed by
    /// `seed` and `label`.
    pub fn from_values(values: &[f64], resamples: usize, seed: u64, label: &str) -> Result<Self> {
        let (ci_low, ci_high) = bootstrap_mean_ci(values, resamples, derive_seed(seed, label))?;
        Ok(Self {
            mean: mean(values),
            std: std_dev(values),
            ci_low,
            ci_high,
        })
    }
}

/// Paired difference `a - b` across shuffles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub a: String,
    pub b: String,
    pub delta_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: String,
    pub seed: u64,
    pub shuffles: usize,
    pub methods: BTreeMap<String, MetricSummary>,
    pub paired: Vec<PairedDelta>,
    pub per_shuffle: BTreeMap<String, Vec<f64>>,
}

impl ExperimentReport {
    pub(crate) fn build(
        protocol: &str,
        config: &HarnessConfig,
        per_shuffle: BTreeMap<String, Vec<f64>>,
        pairs: &[(&str, &str)],
    ) -> Result<Self> {
        let mut methods = BTreeMap::new();
        for (name, values) in &per_shuffle {
            methods.insert(
                name.clone(),
                MetricSummary::from_values(values, config.resamples, config.seed, name)?,
            );
        }
        let mut paired = Vec::new();
        for &(a, b) in pairs {
            let (Some(va), Some(vb)) = (per_shuffle.get(a), per_shuffle.get(b)) else {
                continue;
            };
            let seed = derive_seed(config.seed, &format!("{a}-{b}"));
            let d = paired_bootstrap(va, vb, config.resamples, seed)?;
            paired.push(PairedDelta {
                a: a.to_string(),
                b: b.to_string(),
                delta_mean: d.delta_mean,
                ci_low: d.ci_low,
                ci_high: d.ci_high,
            });
        }
        Ok(Self {
            protocol: protocol.to_string(),
            seed: config.seed,
            shuffles: config.shuffles,
            methods,
            paired,
            per_shuffle,
        })
    }

    /// Mean of `method`, if present.
    pub fn mean(&self, method: &str) -> Option<f64> {
        self.methods.get(method).map(|m| m.mean)
    }
}
