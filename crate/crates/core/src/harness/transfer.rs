use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::report::ExperimentReport;
use super::shift::{learn, permutation, replay_online};
use super::HarnessConfig;
use crate::calibrator::Pool;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::metrics::ece;
use crate::rng::{derive_seed, substream};
use crate::selection::TaskResponses;

/// Target-stream ECE of each arm for one shuffle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferShuffle {
    pub raw: f64,
    /// Factors learned on the source, applied to the target without updates.
    pub transferred: f64,
    /// A fresh calibrator learning online on the target.
    pub from_scratch: f64,
    /// The frozen source state (unchanged by the target replay).
    pub frozen: Pool,
}

pub fn transfer_shuffle(
    source: &[TaskResponses],
    target: &[TaskResponses],
    config: &HarnessConfig,
    shuffle: usize,
) -> Result<TransferShuffle> {
    if source.is_empty() {
        return Err(Error::Empty("source stream has no tasks"));
    }
    if target.is_empty() {
        return Err(Error::Empty("target stream has no tasks"));
    }
    let mut rng = substream(derive_seed(config.seed, "transfer"), shuffle as u64);
    let source_order = permutation(source.len(), &mut rng);
    let target_order = permutation(target.len(), &mut rng);
    let bins = config.ece_bins;

    let mut frozen = Pool::new(config.calibrator)?;
    learn(&mut frozen, source_order.iter().map(|&i| &source[i]))?;
    let mut raw = Vec::new();
    let mut transferred = Vec::new();
    for &i in &target_order {
        for r in &target[i].responses {
            raw.push((r.confidence, r.correct));
            transferred.push((frozen.calibrate(&r.agent, r.confidence)?, r.correct));
        }
    }
    let mut scratch = Pool::new(config.calibrator)?;
    let online = replay_online(&mut scratch, target_order.iter().map(|&i| &target[i]))?;
    Ok(TransferShuffle {
        raw: ece(&raw, bins)?.ece,
        transferred: ece(&transferred, bins)?.ece,
        from_scratch: ece(&online, bins)?.ece,
        frozen,
    })
}

/// Cross-task transfer protocol with raw, transferred and from-scratch arms.
pub fn run_transfer<E: Executor>(
    source: &[TaskResponses],
    target: &[TaskResponses],
    config: &HarnessConfig,
    exec: &E,
) -> Result<ExperimentReport> {
    config.validate()?;
    let runs = exec.map(config.shuffles, |s| {
        transfer_shuffle(source, target, config, s).map(|r| [r.raw, r.transferred, r.from_scratch])
    });
    let mut per_shuffle: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in runs {
        for (name, v) in ["raw", "transferred", "from_scratch"].iter().zip(run?) {
            per_shuffle.entry(name.to_string()).or_default().push(v);
        }
    }
    ExperimentReport::build(
        "transfer",
        config,
        per_shuffle,
        &[("from_scratch", "transferred"), ("transferred", "raw")],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::observation::{group_tasks, ConfidenceChannel};
    use crate::synthetic::{generate, Accuracy, AgentProfile, ConfidenceLaw, ScenarioSpec};
    use alloc::format;

    fn stream(scale: f64, length: usize, seed: u64) -> Vec<TaskResponses> {
        let agents = (0..3)
            .map(|i| {
                AgentProfile::new(
                    format!("a{i}"),
                    Accuracy::FollowsConfidence { scale, offset: 0.0 },
                    ConfidenceLaw::Uniform {
                        low: 0.4,
                        high: 1.0,
                    },
                )
            })
            .collect();
        group_tasks(&generate(&ScenarioSpec::new(agents, length, seed)).unwrap(), ConfidenceChannel::Verbalized)
            .unwrap()
    }

    #[test]
    fn frozen_arm_is_not_updated() {
        let source = stream(0.8, 200, 1);
        let target = stream(0.5, 200, 2);
        let cfg = HarnessConfig {
            shuffles: 1,
            resamples: 100,
            ..HarnessConfig::default()
        };
        let run = transfer_shuffle(&source, &target, &cfg, 0).unwrap();
        let mut expected = Pool::new(cfg.calibrator).unwrap();
        let mut rng = substream(derive_seed(cfg.seed, "transfer"), 0);
        let order = permutation(source.len(), &mut rng);
        learn(&mut expected, order.iter().map(|&i| &source[i])).unwrap();
        assert_eq!(run.frozen, expected);
    }

    #[test]
    fn report_has_three_arms() {
        let source = stream(0.9, 150, 1);
        let target = stream(0.5, 150, 2);
        let cfg = HarnessConfig {
            shuffles: 3,
            resamples: 100,
            ..HarnessConfig::default()
        };
        let r = run_transfer(&source, &target, &cfg, &Sequential).unwrap();
        assert_eq!(r.methods.len(), 3);
        assert!(r.mean("transferred").unwrap() < r.mean("raw").unwrap());
    }
}
