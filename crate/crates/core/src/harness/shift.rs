use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::report::ExperimentReport;
use super::HarnessConfig;
use crate::baselines::{fit_histogram, fit_platt, fit_temperature, FittedBaseline};
use crate::calibrator::{CalibratorConfig, Pool};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::metrics::ece;
use crate::rng::{derive_seed, substream};
use crate::selection::{selection_suite, Mode, TaskResponses};

/// Method keys of a shift report, in column order.
pub const SHIFT_METHODS: [&str; 5] = ["raw", "margin", "temperature", "platt", "histogram"];

/// Feeds every response of `tasks`, in order, to `pool`.
pub fn learn<'a>(pool: &mut Pool, tasks: impl IntoIterator<Item = &'a TaskResponses>) -> Result<()> {
    for task in tasks {
        for r in &task.responses {
            pool.observe(&r.agent, r.confidence, r.correct)?;
        }
    }
    Ok(())
}

/// Online pass: each task is calibrated with the current state, then its
/// outcomes are learned. Returns `(calibrated, correct)` per response.
pub fn replay_online<'a>(
    pool: &mut Pool,
    tasks: impl IntoIterator<Item = &'a TaskResponses>,
) -> Result<Vec<(f64, bool)>> {
    let mut out = Vec::new();
    for task in tasks {
        for r in &task.responses {
            out.push((pool.calibrate(&r.agent, r.confidence)?, r.correct));
        }
        for r in &task.responses {
            pool.observe(&r.agent, r.confidence, r.correct)?;
        }
    }
    Ok(out)
}

pub(crate) fn permutation<R: rand::Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Orderings drawn for one shuffle of the shift protocol.
pub(crate) struct ShiftOrder {
    pub phase1: Vec<usize>,
    pub phase2: Vec<usize>,
    /// Phase-1 task indices used to fit the baselines.
    pub calibration: Vec<usize>,
}

pub(crate) fn shift_order(n1: usize, n2: usize, seed: u64, shuffle: usize) -> ShiftOrder {
    let mut rng = substream(derive_seed(seed, "shift"), shuffle as u64);
    let phase1 = permutation(n1, &mut rng);
    let phase2 = permutation(n2, &mut rng);
    let mut split = permutation(n1, &mut rng);
    split.truncate(n1.div_ceil(2));
    split.sort_unstable();
    ShiftOrder {
        phase1,
        phase2,
        calibration: split,
    }
}

/// Phase-2 ECE of the online calibrator for one shuffle.
pub(crate) fn margin_phase2_ece(
    phase1: &[TaskResponses],
    phase2: &[TaskResponses],
    calibrator: CalibratorConfig,
    bins: usize,
    order: &ShiftOrder,
) -> Result<f64> {
    let mut pool = Pool::new(calibrator)?;
    learn(&mut pool, order.phase1.iter().map(|&i| &phase1[i]))?;
    let preds = replay_online(&mut pool, order.phase2.iter().map(|&i| &phase2[i]))?;
    Ok(ece(&preds, bins)?.ece)
}

/// Per-method phase-2 ECE of one shuffle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftShuffle {
    pub raw: f64,
    pub margin: f64,
    pub temperature: f64,
    pub platt: f64,
    pub histogram: f64,
    pub baselines: Vec<FittedBaseline>,
}

impl ShiftShuffle {
    fn values(&self) -> [f64; 5] {
        [self.raw, self.margin, self.temperature, self.platt, self.histogram]
    }
}

fn check_phases(phase1: &[TaskResponses], phase2: &[TaskResponses]) -> Result<()> {
    if phase1.is_empty() {
        return Err(Error::Empty("phase 1 has no tasks"));
    }
    if phase2.is_empty() {
        return Err(Error::Empty("phase 2 has no tasks"));
    }
    Ok(())
}

/// One shuffle of the shift protocol.
///
/// Baselines are fitted per agent on a random half of the phase-1 tasks and
/// applied frozen to phase 2; agents with no calibration data pass through
/// unchanged.
pub fn shift_shuffle(
    phase1: &[TaskResponses],
    phase2: &[TaskResponses],
    config: &HarnessConfig,
    shuffle: usize,
) -> Result<ShiftShuffle> {
    check_phases(phase1, phase2)?;
    let order = shift_order(phase1.len(), phase2.len(), config.seed, shuffle);
    let bins = config.ece_bins;
    let margin = margin_phase2_ece(phase1, phase2, config.calibrator, bins, &order)?;

    let mut calib: BTreeMap<&str, Vec<(f64, bool)>> = BTreeMap::new();
    for &i in &order.calibration {
        for r in &phase1[i].responses {
            calib.entry(r.agent.as_str()).or_default().push((r.confidence, r.correct));
        }
    }
    let eps = config.calibrator.epsilon;
    let mut baselines = Vec::new();
    let mut fits: [BTreeMap<&str, FittedBaseline>; 3] = Default::default();
    for (&agent, data) in &calib {
        let fitted = [
            fit_temperature(agent, data, eps)?,
            fit_platt(agent, data, eps)?,
            fit_histogram(agent, data, bins)?,
        ];
        for (slot, fit) in fits.iter_mut().zip(fitted) {
            baselines.push(fit.clone());
            slot.insert(agent, fit);
        }
    }
    let mut raw = Vec::new();
    let mut mapped: [Vec<(f64, bool)>; 3] = Default::default();
    for task in phase2 {
        for r in &task.responses {
            raw.push((r.confidence, r.correct));
            for (out, slot) in mapped.iter_mut().zip(&fits) {
                let c = slot.get(r.agent.as_str()).map_or(r.confidence, |f| f.apply(r.confidence));
                out.push((c, r.correct));
            }
        }
    }
    Ok(ShiftShuffle {
        raw: ece(&raw, bins)?.ece,
        margin,
        temperature: ece(&mapped[0], bins)?.ece,
        platt: ece(&mapped[1], bins)?.ece,
        histogram: ece(&mapped[2], bins)?.ece,
        baselines,
    })
}

/// Two-phase distribution-shift protocol over `config.shuffles` shuffles.
pub fn run_shift<E: Executor>(
    phase1: &[TaskResponses],
    phase2: &[TaskResponses],
    config: &HarnessConfig,
    exec: &E,
) -> Result<ExperimentReport> {
    config.validate()?;
    check_phases(phase1, phase2)?;
    let runs = exec.map(config.shuffles, |s| shift_shuffle(phase1, phase2, config, s));
    let mut per_shuffle: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in runs {
        for (name, v) in SHIFT_METHODS.iter().zip(run?.values()) {
            per_shuffle.entry(name.to_string()).or_default().push(v);
        }
    }
    ExperimentReport::build(
        "shift",
        config,
        per_shuffle,
        &[
            ("margin", "raw"),
            ("margin", "temperature"),
            ("margin", "platt"),
            ("margin", "histogram"),
        ],
    )
}

/// Raw versus online-calibrated selection over shuffled orderings of one
/// task stream.
pub fn run_selection<E: Executor>(
    tasks: &[TaskResponses],
    config: &HarnessConfig,
    exec: &E,
) -> Result<ExperimentReport> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(Error::Empty("no tasks in stream"));
    }
    let runs = exec.map(config.shuffles, |s| -> Result<Vec<(&'static str, f64)>> {
        let mut rng = substream(derive_seed(config.seed, "selection"), s as u64);
        let order: Vec<TaskResponses> =
            permutation(tasks.len(), &mut rng).into_iter().map(|i| tasks[i].clone()).collect();
        let mut pool = Pool::new(config.calibrator)?;
        let raw = selection_suite(&order, &mut pool, Mode::Raw, config.ece_bins)?;
        let margin = selection_suite(&order, &mut pool, Mode::Margin, config.ece_bins)?;
        let mut row = alloc::vec![
            ("raw.pass_at_1", raw.pass_at_1),
            ("margin.pass_at_1", margin.pass_at_1),
            ("raw.ece", raw.calibration.ece),
            ("margin.ece", margin.calibration.ece),
            ("oracle", raw.oracle),
            ("random", raw.random_expected),
            ("majority", raw.majority),
        ];
        if let (Some(a), Some(b)) = (raw.pairwise_resolution, margin.pairwise_resolution) {
            row.push(("raw.pairwise_resolution", a));
            row.push(("margin.pairwise_resolution", b));
        }
        Ok(row)
    });
    let mut per_shuffle: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in runs {
        for (name, v) in run? {
            per_shuffle.entry(name.to_string()).or_default().push(v);
        }
    }
    ExperimentReport::build(
        "selection",
        config,
        per_shuffle,
        &[
            ("margin.pass_at_1", "raw.pass_at_1"),
            ("margin.pairwise_resolution", "raw.pairwise_resolution"),
            ("margin.ece", "raw.ece"),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::observation::{group_tasks, ConfidenceChannel};
    use crate::synthetic::{generate, Accuracy, AgentProfile, ConfidenceLaw, ScenarioSpec};
    use alloc::format;

    fn stream(accuracy: Accuracy, length: usize, seed: u64) -> Vec<TaskResponses> {
        let agents = (0..4)
            .map(|i| {
                AgentProfile::new(
                    format!("a{i}"),
                    accuracy.clone(),
                    ConfidenceLaw::Uniform {
                        low: 0.3,
                        high: 1.0,
                    },
                )
            })
            .collect();
        let obs = generate(&ScenarioSpec::new(agents, length, seed)).unwrap();
        group_tasks(&obs, ConfidenceChannel::Verbalized).unwrap()
    }

    fn config(shuffles: usize) -> HarnessConfig {
        HarnessConfig {
            shuffles,
            resamples: 200,
            seed: 3,
            ..HarnessConfig::default()
        }
    }

    #[test]
    fn phase_boundary_keeps_state() {
        let p1 = stream(Accuracy::Fixed(0.6), 50, 1);
        let p2 = stream(Accuracy::Fixed(0.3), 50, 2);
        let cfg = CalibratorConfig::default();
        let mut continuous = Pool::new(cfg).unwrap();
        learn(&mut continuous, &p1).unwrap();
        let snapshot = continuous.clone();
        let a = replay_online(&mut continuous, &p2).unwrap();
        let mut resumed = snapshot;
        let b = replay_online(&mut resumed, &p2).unwrap();
        assert_eq!(a, b);
        assert_eq!(continuous, resumed);
    }

    #[test]
    fn shuffles_are_independent_of_run_order() {
        let p1 = stream(Accuracy::Fixed(0.6), 60, 1);
        let p2 = stream(Accuracy::Fixed(0.4), 40, 2);
        let cfg = config(4);
        let forward: Vec<_> = (0..4).map(|s| shift_shuffle(&p1, &p2, &cfg, s).unwrap()).collect();
        let mut backward: Vec<_> =
            (0..4).rev().map(|s| shift_shuffle(&p1, &p2, &cfg, s).unwrap()).collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn frozen_baselines_do_not_change() {
        let p1 = stream(Accuracy::Fixed(0.6), 60, 1);
        let run = shift_shuffle(&p1, &p1, &config(1), 0).unwrap();
        let before = alloc::format!("{:?}", run.baselines);
        for b in &run.baselines {
            let _ = b.apply(0.7);
        }
        assert_eq!(before, alloc::format!("{:?}", run.baselines));
        assert_eq!(run.baselines.len(), 12);
    }

    #[test]
    fn single_shuffle_is_deterministic() {
        let p1 = stream(Accuracy::Fixed(0.6), 40, 1);
        let p2 = stream(Accuracy::Fixed(0.5), 40, 2);
        let a = run_shift(&p1, &p2, &config(1), &Sequential).unwrap();
        let b = run_shift(&p1, &p2, &config(1), &Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.methods.len(), 5);
        assert_eq!(a.paired.len(), 4);
    }

    #[test]
    fn unseen_phase2_agent_is_allowed() {
        let p1 = stream(Accuracy::Fixed(0.6), 40, 1);
        let mut p2 = stream(Accuracy::Fixed(0.6), 20, 2);
        for t in &mut p2 {
            for r in &mut t.responses {
                r.agent = format!("new-{}", r.agent);
                if !r.correct {
                    r.answer_class = format!("x-{}", r.agent);
                }
            }
        }
        assert!(run_shift(&p1, &p2, &config(2), &Sequential).is_ok());
    }

    #[test]
    fn empty_phase_rejected() {
        let p1 = stream(Accuracy::Fixed(0.6), 10, 1);
        assert!(run_shift(&p1, &[], &config(1), &Sequential).is_err());
    }

    #[test]
    fn selection_report_has_both_modes() {
        let tasks = stream(
            Accuracy::FollowsConfidence {
                scale: 0.6,
                offset: 0.0,
            },
            80,
            4,
        );
        let r = run_selection(&tasks, &config(3), &Sequential).unwrap();
        assert!(r.methods.contains_key("margin.pass_at_1"));
        assert!(r.mean("oracle").unwrap() >= r.mean("raw.pass_at_1").unwrap());
    }
}
