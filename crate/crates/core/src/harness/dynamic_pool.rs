//! Pools whose membership changes mid-stream.
//!
//! One step is one task: every active agent answers it, each answer is
//! calibrated with the current state and then learned.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::bootstrap::{paired_bootstrap, PairedInterval};
use super::report::MetricSummary;
use super::shift::permutation;
use super::HarnessConfig;
use crate::calibrator::{AgentCalibrator, CalibratorConfig, Pool, PriorSource};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::metrics::ece;
use crate::rng::{derive_seed, substream};
use crate::selection::TaskResponses;
use crate::stats::{mean, ols_slope, variance};

/// Newcomer observation counts at which cumulative ECE is recorded.
pub const COLD_START_CHECKPOINTS: [usize; 4] = [50, 100, 150, 200];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// At `drop_at`, the `drop_count` agents with the most observations
    /// (ties by id) leave for good.
    Dropout { drop_at: usize, drop_count: usize },
    /// Only `established` agents run until `join_at`, then `newcomers` join.
    /// Empty lists mean: the first four agents by id, then the next five.
    ColdStart {
        join_at: usize,
        #[serde(default)]
        established: Vec<String>,
        #[serde(default)]
        newcomers: Vec<String>,
    },
    /// Every `interval` steps the active agent with the highest ECE over its
    /// last `interval` predictions (ties by id) is benched and the longest
    /// benched agent returns with its saved state. The last `reserve`
    /// agents by id start on the bench. Segment ECE skips `settle` steps
    /// after each swap.
    Rolling {
        interval: usize,
        reserve: usize,
        #[serde(default)]
        max_swaps: Option<usize>,
        settle: usize,
    },
}

impl Scenario {
    pub fn dropout() -> Self {
        Scenario::Dropout {
            drop_at: 500,
            drop_count: 2,
        }
    }

    pub fn cold_start() -> Self {
        Scenario::ColdStart {
            join_at: 500,
            established: Vec::new(),
            newcomers: Vec::new(),
        }
    }

    pub fn rolling() -> Self {
        Scenario::Rolling {
            interval: 200,
            reserve: 1,
            max_swaps: None,
            settle: 50,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Dropout { .. } => "dropout",
            Scenario::ColdStart { .. } => "coldstart",
            Scenario::Rolling { .. } => "rolling",
        }
    }
}

/// Run length and window settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicSettings {
    pub steps: usize,
    /// Trailing window, in steps, of the pooled windowed ECE.
    pub window: usize,
    /// Windows ending before this step are excluded from the dropout
    /// comparison.
    pub warmup: usize,
}

impl Default for DynamicSettings {
    fn default() -> Self {
        Self {
            steps: 1000,
            window: 50,
            warmup: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutSummary {
    pub dropped: Vec<String>,
    pub pre_mean: f64,
    pub post_mean: f64,
    pub delta: f64,
    pub pooled_std: f64,
    pub per_shuffle_pre: Vec<f64>,
    pub per_shuffle_post: Vec<f64>,
    /// `|delta| < pooled_std`.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartSummary {
    pub established: Vec<String>,
    pub newcomers: Vec<String>,
    pub checkpoints: Vec<usize>,
    /// Pool-level prior with the configured shrinkage.
    pub shrinkage: Vec<MetricSummary>,
    /// Per-band EWMA with no shrinkage.
    pub no_shrinkage: Vec<MetricSummary>,
    /// `shrinkage - no_shrinkage` per checkpoint.
    pub deltas: Vec<PairedInterval>,
    /// Shrinkage has the lower mean at every checkpoint.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingSummary {
    pub swaps_per_run: usize,
    /// Mean ECE of each post-swap segment.
    pub segment_means: Vec<f64>,
    /// Per-shuffle least-squares slope of segment ECE against segment index.
    pub slope: MetricSummary,
    pub per_shuffle_slope: Vec<f64>,
    /// The slope interval contains zero.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicPoolReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub shuffles: usize,
    pub settings: DynamicSettings,
    /// Step at which each window ends (exclusive), aligned with the series.
    pub window_ends: Vec<usize>,
    /// Windowed ECE averaged over shuffles.
    pub mean_window_series: Vec<f64>,
    pub dropout: Option<DropoutSummary>,
    pub cold_start: Option<ColdStartSummary>,
    pub rolling: Option<RollingSummary>,
}

#[derive(Debug, Clone)]
struct Prediction {
    agent: usize,
    calibrated: f64,
    correct: bool,
}

struct Trace {
    steps: Vec<Vec<Prediction>>,
    dropped: Vec<String>,
    swaps: usize,
}

/// Resolved membership plan.
struct Plan {
    initial: Vec<usize>,
    newcomers: Vec<usize>,
    bench: Vec<usize>,
}

fn agent_universe(tasks: &[TaskResponses]) -> Vec<String> {
    let set: BTreeSet<&str> = tasks
        .iter()
        .flat_map(|t| t.responses.iter().map(|r| r.agent.as_str()))
        .collect();
    set.into_iter().map(String::from).collect()
}

fn plan(scenario: &Scenario, agents: &[String], settings: &DynamicSettings) -> Result<Plan> {
    let mismatch = |msg: String| Err(Error::InvalidScenario(msg));
    let all: Vec<usize> = (0..agents.len()).collect();
    let lookup = |id: &String| {
        agents
            .iter()
            .position(|a| a == id)
            .ok_or_else(|| Error::InvalidScenario(format!("agent {id} not in the task stream")))
    };
    match scenario {
        Scenario::Dropout { drop_at, drop_count } => {
            if agents.len() <= *drop_count {
                return mismatch(format!(
                    "dropout removes {drop_count} of only {} agents",
                    agents.len()
                ));
            }
            if *drop_at >= settings.steps || *drop_at < settings.warmup {
                return mismatch(format!("drop_at {drop_at} outside [warmup, steps)"));
            }
            Ok(Plan {
                initial: all,
                newcomers: Vec::new(),
                bench: Vec::new(),
            })
        }
        Scenario::ColdStart {
            join_at,
            established,
            newcomers,
        } => {
            let (est, new) = if established.is_empty() && newcomers.is_empty() {
                if agents.len() < 9 {
                    return mismatch(format!("cold start needs 9 agents, found {}", agents.len()));
                }
                ((0..4).collect(), (4..9).collect())
            } else {
                let est = established.iter().map(lookup).collect::<Result<Vec<_>>>()?;
                let new = newcomers.iter().map(lookup).collect::<Result<Vec<_>>>()?;
                (est, new)
            };
            if est.is_empty() || new.is_empty() {
                return mismatch("cold start needs established agents and newcomers".into());
            }
            if est.iter().any(|a| new.contains(a)) {
                return mismatch("an agent cannot be both established and a newcomer".into());
            }
            let needed = COLD_START_CHECKPOINTS[COLD_START_CHECKPOINTS.len() - 1];
            if join_at + needed > settings.steps {
                return mismatch(format!(
                    "newcomers joining at {join_at} cannot reach {needed} observations"
                ));
            }
            Ok(Plan {
                initial: est,
                newcomers: new,
                bench: Vec::new(),
            })
        }
        Scenario::Rolling {
            interval, reserve, ..
        } => {
            if *interval == 0 || *reserve == 0 || agents.len() <= *reserve {
                return mismatch(format!(
                    "rolling needs a positive interval and 0 < reserve < {} agents",
                    agents.len()
                ));
            }
            let split = agents.len() - reserve;
            Ok(Plan {
                initial: (0..split).collect(),
                newcomers: Vec::new(),
                bench: (split..agents.len()).collect(),
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    tasks: &[TaskResponses],
    order: &[usize],
    agents: &[String],
    scenario: &Scenario,
    plan: &Plan,
    calibrator: CalibratorConfig,
    bins: usize,
    steps: usize,
) -> Result<Trace> {
    let index: BTreeMap<&str, usize> = agents.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let mut pool = Pool::new(calibrator)?;
    let mut active: BTreeSet<usize> = plan.initial.iter().copied().collect();
    let mut bench: VecDeque<(usize, Option<AgentCalibrator>)> =
        plan.bench.iter().map(|&a| (a, None)).collect();
    let mut recent: BTreeMap<usize, VecDeque<(f64, bool)>> = BTreeMap::new();
    let mut trace = Trace {
        steps: Vec::with_capacity(steps),
        dropped: Vec::new(),
        swaps: 0,
    };
    for (t, &task_idx) in order.iter().take(steps).enumerate() {
        match scenario {
            Scenario::Dropout { drop_at, drop_count } if t == *drop_at => {
                let mut ranked: Vec<(u64, usize)> = active
                    .iter()
                    .map(|&a| (pool.agent(&agents[a]).map_or(0, AgentCalibrator::observations), a))
                    .collect();
                // most observations first, then smallest id
                ranked.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
                for &(_, a) in ranked.iter().take(*drop_count) {
                    active.remove(&a);
                    pool.remove_agent(&agents[a]);
                    trace.dropped.push(agents[a].clone());
                }
            }
            Scenario::ColdStart { join_at, .. } if t == *join_at => {
                active.extend(plan.newcomers.iter().copied());
            }
            Scenario::Rolling {
                interval,
                max_swaps,
                ..
            } if t > 0 && t % interval == 0 && max_swaps.is_none_or(|m| trace.swaps < m) => {
                let mut worst: Option<(f64, usize)> = None;
                for &a in &active {
                    let history: Vec<(f64, bool)> =
                        recent.get(&a).map(|h| h.iter().copied().collect()).unwrap_or_default();
                    let score = if history.is_empty() { 0.0 } else { ece(&history, bins)?.ece };
                    if worst.is_none_or(|(s, _)| score > s) {
                        worst = Some((score, a));
                    }
                }
                if let (Some((_, out)), Some((incoming, state))) = (worst, bench.pop_front()) {
                    active.remove(&out);
                    let parked = pool.remove_agent(&agents[out]);
                    bench.push_back((out, parked));
                    match state {
                        Some(s) => pool.insert_agent(&agents[incoming], s)?,
                        None => pool.add_agent(&agents[incoming]),
                    }
                    recent.remove(&out);
                    active.insert(incoming);
                    trace.swaps += 1;
                }
            }
            _ => {}
        }
        let task = &tasks[task_idx];
        let responding: Vec<(usize, &crate::selection::Response)> = task
            .responses
            .iter()
            .filter_map(|r| index.get(r.agent.as_str()).map(|&a| (a, r)))
            .filter(|(a, _)| active.contains(a))
            .collect();
        let mut step = Vec::with_capacity(responding.len());
        for &(a, r) in &responding {
            step.push(Prediction {
                agent: a,
                calibrated: pool.calibrate(&r.agent, r.confidence)?,
                correct: r.correct,
            });
        }
        for &(_, r) in &responding {
            pool.observe(&r.agent, r.confidence, r.correct)?;
        }
        if let Scenario::Rolling { interval, .. } = scenario {
            for p in &step {
                let h = recent.entry(p.agent).or_default();
                h.push_back((p.calibrated, p.correct));
                if h.len() > *interval {
                    h.pop_front();
                }
            }
        }
        trace.steps.push(step);
    }
    Ok(trace)
}

fn pooled_ece(steps: &[Vec<Prediction>], bins: usize) -> Result<f64> {
    let preds: Vec<(f64, bool)> = steps
        .iter()
        .flatten()
        .map(|p| (p.calibrated, p.correct))
        .collect();
    if preds.is_empty() {
        return Err(Error::InvalidScenario("a window has no predictions".into()));
    }
    Ok(ece(&preds, bins)?.ece)
}

fn window_series(trace: &Trace, window: usize, bins: usize) -> Result<Vec<f64>> {
    (window..=trace.steps.len())
        .map(|end| pooled_ece(&trace.steps[end - window..end], bins))
        .collect()
}

fn newcomer_checkpoints(trace: &Trace, newcomers: &[usize], bins: usize) -> Result<Vec<f64>> {
    let mut per_agent: BTreeMap<usize, Vec<(f64, bool)>> = BTreeMap::new();
    for p in trace.steps.iter().flatten() {
        if newcomers.contains(&p.agent) {
            per_agent.entry(p.agent).or_default().push((p.calibrated, p.correct));
        }
    }
    COLD_START_CHECKPOINTS
        .iter()
        .map(|&k| {
            let pooled: Vec<(f64, bool)> = per_agent
                .values()
                .flat_map(|v| v.iter().take(k).copied())
                .collect();
            Ok(ece(&pooled, bins)?.ece)
        })
        .collect()
}

fn segment_eces(trace: &Trace, interval: usize, settle: usize, bins: usize) -> Result<Vec<f64>> {
    let n = trace.steps.len();
    let mut out = Vec::new();
    let mut k = 1;
    while k * interval + settle < n {
        let lo = k * interval + settle;
        let hi = ((k + 1) * interval).min(n);
        out.push(pooled_ece(&trace.steps[lo..hi], bins)?);
        k += 1;
    }
    Ok(out)
}

struct ShuffleOutcome {
    series: Vec<f64>,
    dropped: Vec<String>,
    cold: Option<(Vec<f64>, Vec<f64>)>,
    segments: Option<(Vec<f64>, usize)>,
}

/// Runs `scenario` over `config.shuffles` task orderings.
///
/// `tasks` must hold at least `settings.steps` tasks; each shuffle replays
/// the first `settings.steps` of a fresh permutation.
pub fn run_dynamic_pool<E: Executor>(
    scenario: &Scenario,
    tasks: &[TaskResponses],
    settings: &DynamicSettings,
    config: &HarnessConfig,
    exec: &E,
) -> Result<DynamicPoolReport> {
    config.validate()?;
    if settings.window == 0 || settings.window > settings.steps {
        return Err(Error::InvalidConfig("window must lie in [1, steps]".into()));
    }
    if tasks.len() < settings.steps {
        return Err(Error::InvalidScenario(format!(
            "{} tasks supplied, {} steps required",
            tasks.len(),
            settings.steps
        )));
    }
    let agents = agent_universe(tasks);
    let plan = plan(scenario, &agents, settings)?;
    let bins = config.ece_bins;
    let seed = derive_seed(config.seed, "dynamic-pool");
    let outcomes = exec.map(config.shuffles, |s| -> Result<ShuffleOutcome> {
        let mut rng = substream(seed, s as u64);
        let order = permutation(tasks.len(), &mut rng);
        let run = |calibrator| {
            simulate(tasks, &order, &agents, scenario, &plan, calibrator, bins, settings.steps)
        };
        match scenario {
            Scenario::ColdStart { .. } => {
                let with = run(config.calibrator.with_prior(PriorSource::PoolLevel))?;
                let without = run(config.calibrator.with_shrinkage(0.0))?;
                Ok(ShuffleOutcome {
                    series: window_series(&with, settings.window, bins)?,
                    dropped: Vec::new(),
                    cold: Some((
                        newcomer_checkpoints(&with, &plan.newcomers, bins)?,
                        newcomer_checkpoints(&without, &plan.newcomers, bins)?,
                    )),
                    segments: None,
                })
            }
            Scenario::Rolling {
                interval, settle, ..
            } => {
                let trace = run(config.calibrator)?;
                Ok(ShuffleOutcome {
                    series: window_series(&trace, settings.window, bins)?,
                    dropped: Vec::new(),
                    cold: None,
                    segments: Some((segment_eces(&trace, *interval, *settle, bins)?, trace.swaps)),
                })
            }
            Scenario::Dropout { .. } => {
                let trace = run(config.calibrator)?;
                Ok(ShuffleOutcome {
                    series: window_series(&trace, settings.window, bins)?,
                    dropped: trace.dropped,
                    cold: None,
                    segments: None,
                })
            }
        }
    });
    let outcomes: Vec<ShuffleOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let window_ends: Vec<usize> = (settings.window..=settings.steps).collect();
    let shuffles = outcomes.len() as f64;
    let mean_window_series = (0..window_ends.len())
        .map(|i| outcomes.iter().map(|o| o.series[i]).sum::<f64>() / shuffles)
        .collect();

    let mut report = DynamicPoolReport {
        scenario: scenario.clone(),
        seed: config.seed,
        shuffles: config.shuffles,
        settings: *settings,
        window_ends: window_ends.clone(),
        mean_window_series,
        dropout: None,
        cold_start: None,
        rolling: None,
    };
    match scenario {
        Scenario::Dropout { drop_at, .. } => {
            let pick = |o: &ShuffleOutcome, keep: &dyn Fn(usize) -> bool| -> Vec<f64> {
                window_ends
                    .iter()
                    .zip(&o.series)
                    .filter(|(&e, _)| keep(e))
                    .map(|(_, &v)| v)
                    .collect()
            };
            let is_pre = |e: usize| e >= settings.warmup && e <= *drop_at;
            let is_post = |e: usize| e >= drop_at + settings.window;
            let pre: Vec<Vec<f64>> = outcomes.iter().map(|o| pick(o, &is_pre)).collect();
            let post: Vec<Vec<f64>> = outcomes.iter().map(|o| pick(o, &is_post)).collect();
            if post.iter().any(Vec::is_empty) {
                return Err(Error::InvalidScenario("no full window after the drop".into()));
            }
            let per_shuffle_pre: Vec<f64> = pre.iter().map(|v| mean(v)).collect();
            let per_shuffle_post: Vec<f64> = post.iter().map(|v| mean(v)).collect();
            let pre_mean = mean(&per_shuffle_pre);
            let post_mean = mean(&per_shuffle_post);
            let all_pre: Vec<f64> = pre.concat();
            let all_post: Vec<f64> = post.concat();
            let pooled_std = libm::sqrt((variance(&all_pre) + variance(&all_post)) / 2.0);
            let delta = post_mean - pre_mean;
            report.dropout = Some(DropoutSummary {
                dropped: outcomes[0].dropped.clone(),
                pre_mean,
                post_mean,
                delta,
                pooled_std,
                per_shuffle_pre,
                per_shuffle_post,
                pass: libm::fabs(delta) < pooled_std,
            });
        }
        Scenario::ColdStart { .. } => {
            let mut shrinkage = Vec::new();
            let mut no_shrinkage = Vec::new();
            let mut deltas = Vec::new();
            for (i, k) in COLD_START_CHECKPOINTS.iter().enumerate() {
                let with: Vec<f64> = outcomes.iter().map(|o| o.cold.as_ref().map_or(0.0, |c| c.0[i])).collect();
                let without: Vec<f64> = outcomes.iter().map(|o| o.cold.as_ref().map_or(0.0, |c| c.1[i])).collect();
                let label = format!("coldstart-{k}");
                shrinkage.push(MetricSummary::from_values(&with, config.resamples, config.seed, &format!("{label}-with"))?);
                no_shrinkage.push(MetricSummary::from_values(&without, config.resamples, config.seed, &format!("{label}-without"))?);
                deltas.push(paired_bootstrap(&with, &without, config.resamples, derive_seed(config.seed, &label))?);
            }
            let pass = shrinkage.iter().zip(&no_shrinkage).all(|(a, b)| a.mean < b.mean);
            report.cold_start = Some(ColdStartSummary {
                established: plan.initial.iter().map(|&a| agents[a].clone()).collect(),
                newcomers: plan.newcomers.iter().map(|&a| agents[a].clone()).collect(),
                checkpoints: COLD_START_CHECKPOINTS.to_vec(),
                shrinkage,
                no_shrinkage,
                deltas,
                pass,
            });
        }
        Scenario::Rolling { .. } => {
            let segments: Vec<&Vec<f64>> = outcomes.iter().filter_map(|o| o.segments.as_ref().map(|s| &s.0)).collect();
            let count = segments.first().map_or(0, |s| s.len());
            if count < 2 {
                return Err(Error::InvalidScenario("rolling needs at least two post-swap segments".into()));
            }
            let segment_means = (0..count)
                .map(|k| segments.iter().map(|s| s[k]).sum::<f64>() / shuffles)
                .collect();
            let per_shuffle_slope: Vec<f64> = segments
                .iter()
                .map(|s| ols_slope(s).unwrap_or(0.0))
                .collect();
            let slope = MetricSummary::from_values(&per_shuffle_slope, config.resamples, config.seed, "rolling-slope")?;
            report.rolling = Some(RollingSummary {
                swaps_per_run: outcomes[0].segments.as_ref().map_or(0, |s| s.1),
                segment_means,
                pass: slope.ci_low <= 0.0 && 0.0 <= slope.ci_high,
                slope,
                per_shuffle_slope,
            });
        }
    }
    Ok(report)
}

/// Windowed ECE of a plain online replay, for comparing against
/// [`run_dynamic_pool`] series.
pub fn plain_window_series(
    tasks: &[TaskResponses],
    order: &[usize],
    calibrator: CalibratorConfig,
    window: usize,
    bins: usize,
) -> Result<Vec<f64>> {
    let mut pool = Pool::new(calibrator)?;
    let mut steps = Vec::with_capacity(order.len());
    for &i in order {
        let preds = super::shift::replay_online(&mut pool, core::iter::once(&tasks[i]))?;
        steps.push(
            preds
                .into_iter()
                .map(|(calibrated, correct)| Prediction {
                    agent: 0,
                    calibrated,
                    correct,
                })
                .collect(),
        );
    }
    let trace = Trace {
        steps,
        dropped: Vec::new(),
        swaps: 0,
    };
    window_series(&trace, window, bins)
}
