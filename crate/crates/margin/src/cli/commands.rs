use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use margin_core::baselines::{fit_histogram, fit_platt, fit_temperature, FittedBaseline};
use margin_core::harness::{
    learn, replay_online, run_ablation, run_dynamic_pool, run_selection, run_shift, run_transfer,
    AblationGrid, AblationReport, DynamicSettings, ExperimentReport, HarnessConfig, Scenario,
    ShiftCondition,
};
use margin_core::metrics::ece;
use margin_core::observation::tasks_in_phase;
use margin_core::selection::{selection_suite, Mode};
use margin_core::synthetic::{
    generate, verify_asymmetric, verify_closed_form, verify_convergence,
    verify_selection_monotonicity, verify_tracking, verify_ushape, AsymmetricReport,
    ClosedFormReport, ConvergenceReport, ScenarioSpec, SelectionReport, TrackingReport,
    UShapeReport, UShapeSettings,
};
use margin_core::{group_tasks, ConfidenceChannel, Observation, Pool, TaskResponses};
use serde::{Deserialize, Serialize};

use super::{absolute, Command, ScenarioName, Status, VerifyArgs};
use crate::exec::RayonExecutor;
use crate::io::{parse_json, parse_observations, OutputDir};
use crate::manifest::{sha256_hex, FileDigest};

const CLOSED_FORM_CASES: usize = 20;
const CLOSED_FORM_STEPS: usize = 500;
const CONVERGENCE_THETA: f64 = 0.79;
const CONVERGENCE_STEPS: usize = 2000;
const TRACKING_BEFORE: f64 = 0.6;
const TRACKING_AFTER: f64 = 0.8;
const TRACKING_EPSILON: f64 = 0.01;
const ASYM_UP: f64 = 0.02;
const ASYM_DOWN: f64 = 0.06;
const ASYM_THETA: f64 = 0.8;
const ASYM_STEPS: usize = 2000;
const SELECTION_ACCURACIES: [f64; 2] = [0.8, 0.6];
const SELECTION_SIGMAS: [f64; 6] = [0.0, 0.1, 0.2, 0.4, 0.8, 1.6];
const REPLICATIONS: usize = 10_000;
const SELECTION_REPLICATIONS: usize = 100_000;

/// State shared by a command while it runs: settings, the output directory
/// and a record of every input file read.
pub struct Context<'a> {
    pub config: HarnessConfig,
    pub out: &'a mut OutputDir,
    pub exec: &'a RayonExecutor,
    inputs: Vec<FileDigest>,
}

impl<'a> Context<'a> {
    pub fn new(config: HarnessConfig, out: &'a mut OutputDir, exec: &'a RayonExecutor) -> Self {
        Self {
            config,
            out,
            exec,
            inputs: Vec::new(),
        }
    }

    /// Reads an input file and records its digest.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        let key = path.display().to_string();
        if !self.inputs.iter().any(|d| d.path == key) {
            self.inputs.push(FileDigest {
                path: key,
                sha256: sha256_hex(&bytes),
            });
        }
        Ok(bytes)
    }

    pub fn into_inputs(self) -> Vec<FileDigest> {
        self.inputs
    }

    fn observations(&mut self, path: &Path) -> Result<Vec<Observation>> {
        let bytes = self.read(path)?;
        parse_observations(&bytes, path)
    }

    fn scenario_spec(&mut self, path: &Path) -> Result<ScenarioSpec> {
        let bytes = self.read(path)?;
        let spec: ScenarioSpec = parse_json(&bytes, path, "scenario")?;
        spec.validate().with_context(|| format!("{}", path.display()))?;
        Ok(spec)
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn check_range(name: &str, v: Option<f64>, ok: impl Fn(f64) -> bool, range: &str) -> Result<()> {
    match v {
        Some(x) if !ok(x) => bail!("--{name} must lie in {range}, got {x}"),
        _ => Ok(()),
    }
}

/// Checks command-specific flags before any work starts.
pub fn validate(command: &Command) -> Result<()> {
    match command {
        Command::Verify(a) => {
            check_range("theta", a.theta, |x| (0.0..=1.0).contains(&x), "[0, 1]")?;
            check_range("up", a.up, |x| x > 0.0 && x < 1.0, "(0, 1)")?;
            check_range("down", a.down, |x| x > 0.0 && x < 1.0, "(0, 1)")?;
            ensure!(a.replications != Some(0), "--replications must be at least 1");
        }
        Command::Replay(a) => {
            ensure!(!a.phase1.is_empty(), "--phase1 must not be empty");
            ensure!(!a.phase2.is_empty(), "--phase2 must not be empty");
            ensure!(a.phase1 != a.phase2, "--phase1 and --phase2 must differ");
        }
        Command::DynamicPool(a) => {
            ensure!(a.steps > 0, "--steps must be at least 1");
            ensure!(
                a.window > 0 && a.window <= a.steps,
                "--window must lie in [1, --steps], got {}",
                a.window
            );
        }
        _ => {}
    }
    Ok(())
}

pub fn execute(command: &Command, ctx: &mut Context) -> Result<Status> {
    match command {
        Command::Verify(a) => verify(a, ctx),
        Command::Simulate(a) => simulate(&a.spec, ctx),
        Command::Replay(a) => replay(&a.log, &a.phase1, &a.phase2, a.channel.into(), ctx),
        Command::Transfer(a) => transfer(&a.source, &a.target, a.channel.into(), ctx),
        Command::DynamicPool(a) => dynamic_pool(a.scenario, &a.spec, a.steps, a.window, ctx),
        Command::Ablate(a) => ablate(&a.grid, ctx),
        Command::Report(_) => bail!("report cannot run inside another run"),
    }
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    seed: u64,
    pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<ClosedFormReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    convergence: Option<ConvergenceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tracking: Option<TrackingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ushape: Option<UShapeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    asymmetric: Option<AsymmetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    selection: Option<SelectionReport>,
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn verify(args: &VerifyArgs, ctx: &mut Context) -> Result<Status> {
    let seed = ctx.config.seed;
    let exec = ctx.exec;
    let alpha = ctx.config.calibrator.alpha_up;
    let reps = args.replications.unwrap_or(REPLICATIONS);
    let wants = |p: u8| args.prop.is_none_or(|q| q == p);
    let mut report = VerifyReport {
        seed,
        pass: true,
        closed_form: None,
        convergence: None,
        tracking: None,
        ushape: None,
        asymmetric: None,
        selection: None,
    };
    if wants(1) {
        let r = verify_closed_form(CLOSED_FORM_CASES, CLOSED_FORM_STEPS, seed);
        println!(
            "prop 1 {}  unrolled form: max gap {:.1e}, weight-sum error {:.1e}",
            verdict(r.pass),
            r.max_abs_diff,
            r.max_weight_sum_error
        );
        report.pass &= r.pass;
        report.closed_form = Some(r);
    }
    if wants(2) {
        let theta = args.theta.unwrap_or(CONVERGENCE_THETA);
        let r = verify_convergence(alpha, theta, 0.5, CONVERGENCE_STEPS, reps, seed, exec)?;
        println!(
            "prop 2 {}  mean {} vs {}, sd {} vs {}",
            verdict(r.pass),
            pct(r.empirical_mean),
            pct(r.predicted_mean),
            pct(r.empirical_variance.sqrt()),
            pct(r.predicted_variance.sqrt())
        );
        report.pass &= r.pass;
        report.convergence = Some(r);
    }
    if wants(3) {
        let r = verify_tracking(alpha, TRACKING_BEFORE, TRACKING_AFTER, TRACKING_EPSILON, reps, seed, exec)?;
        let empirical = r.empirical_steps.map_or("never".to_string(), |n| n.to_string());
        println!(
            "prop 3 {}  recovery {} steps vs {:.1} predicted",
            verdict(r.pass),
            empirical,
            r.predicted_steps
        );
        let rows: Vec<Vec<String>> = r
            .bias
            .iter()
            .enumerate()
            .map(|(t, b)| vec![t.to_string(), b.to_string()])
            .collect();
        ctx.out.write_csv("tracking_bias.csv", &["step".into(), "bias".into()], &rows)?;
        report.pass &= r.pass;
        report.tracking = Some(r);
    }
    if wants(4) {
        let r = verify_ushape(&UShapeSettings::default(), reps, seed, exec)?;
        println!(
            "prop 4 {}  error minimized at alpha {} ({} rates, all within bound: {})",
            verdict(r.pass),
            r.argmin_alpha,
            r.rows.len(),
            r.rows.iter().all(|row| row.within_bound)
        );
        let rows: Vec<Vec<String>> = r
            .rows
            .iter()
            .map(|row| {
                vec![
                    row.alpha.to_string(),
                    row.empirical_error.to_string(),
                    row.bound.to_string(),
                    row.within_bound.to_string(),
                ]
            })
            .collect();
        let header = ["alpha", "empirical_error", "bound", "within_bound"].map(String::from);
        ctx.out.write_csv("ushape.csv", &header, &rows)?;
        report.pass &= r.pass;
        report.ushape = Some(r);
    }
    if wants(5) {
        let theta = args.theta.unwrap_or(ASYM_THETA);
        let up = args.up.unwrap_or(ASYM_UP);
        let down = args.down.unwrap_or(ASYM_DOWN);
        let r = verify_asymmetric(up, down, theta, ASYM_STEPS, reps, seed, exec)?;
        println!(
            "prop 5 {}  fixed point {} predicted, {} observed (accuracy {}, bias {})",
            verdict(r.pass),
            pct(r.predicted_fixed_point),
            pct(r.empirical_mean),
            pct(theta),
            pct(r.predicted_bias)
        );
        report.pass &= r.pass;
        report.asymmetric = Some(r);
    }
    if wants(6) {
        let reps = args.replications.unwrap_or(SELECTION_REPLICATIONS);
        let r = verify_selection_monotonicity(&SELECTION_ACCURACIES, &SELECTION_SIGMAS, reps, seed, exec)?;
        println!(
            "prop 6 {}  best-agent selection {} at sigma {} down to {} at sigma {}",
            verdict(r.pass),
            pct(r.rows[0].probability),
            r.rows[0].sigma,
            pct(r.rows[r.rows.len() - 1].probability),
            r.rows[r.rows.len() - 1].sigma
        );
        let rows: Vec<Vec<String>> = r
            .rows
            .iter()
            .map(|row| {
                vec![
                    row.sigma.to_string(),
                    row.probability.to_string(),
                    row.standard_error.to_string(),
                    row.predicted.to_string(),
                    row.agrees.to_string(),
                ]
            })
            .collect();
        let header = ["sigma", "probability", "standard_error", "predicted", "agrees"].map(String::from);
        ctx.out.write_csv("selection.csv", &header, &rows)?;
        report.pass &= r.pass;
        report.selection = Some(r);
    }
    ctx.out.write_json("verify.json", &report)?;
    Ok(Status::from_pass(report.pass))
}

fn print_report(report: &ExperimentReport) {
    for (name, m) in &report.methods {
        println!(
            "{name:<28} {:>8}  [{}, {}]",
            pct(m.mean),
            pct(m.ci_low),
            pct(m.ci_high)
        );
    }
    for d in &report.paired {
        println!(
            "{:<28} {:>8}  [{}, {}]",
            format!("{} - {}", d.a, d.b),
            pct(d.delta_mean),
            pct(d.ci_low),
            pct(d.ci_high)
        );
    }
}

fn write_experiment(out: &mut OutputDir, stem: &str, report: &ExperimentReport) -> Result<()> {
    out.write_json(&format!("{stem}.json"), report)?;
    let mut header = vec!["shuffle".to_string()];
    header.extend(report.per_shuffle.keys().cloned());
    let rows: Vec<Vec<String>> = (0..report.shuffles)
        .map(|s| {
            let mut row = vec![s.to_string()];
            row.extend(report.per_shuffle.values().map(|v| v[s].to_string()));
            row
        })
        .collect();
    out.write_csv(&format!("{stem}_per_shuffle.csv"), &header, &rows)
}

fn simulate(spec_path: &Path, ctx: &mut Context) -> Result<Status> {
    let spec = ctx.scenario_spec(spec_path)?;
    let observations = generate(&spec)?;
    ctx.out.write_jsonl("observations.jsonl", &observations)?;
    let tasks = group_tasks(&observations, ConfidenceChannel::Verbalized)?;
    let report = run_selection(&tasks, &ctx.config, ctx.exec)?;
    print_report(&report);
    write_experiment(ctx.out, "selection", &report)?;

    // One pass in stream order for the reliability tables and final state.
    let mut pool = Pool::new(ctx.config.calibrator)?;
    let bins = ctx.config.ece_bins;
    let raw = selection_suite(&tasks, &mut pool, Mode::Raw, bins)?;
    let margin = selection_suite(&tasks, &mut pool, Mode::Margin, bins)?;
    ctx.out.write_reliability("reliability_raw.csv", &raw.calibration.reliability)?;
    ctx.out.write_reliability("reliability_margin.csv", &margin.calibration.reliability)?;
    let rows: Vec<Vec<String>> = raw
        .convergence
        .iter()
        .zip(&margin.convergence)
        .map(|(r, m)| vec![r.seen.to_string(), r.pass_at_1.to_string(), m.pass_at_1.to_string()])
        .collect();
    let header = ["tasks_seen", "raw_pass_at_1", "margin_pass_at_1"].map(String::from);
    ctx.out.write_csv("convergence.csv", &header, &rows)?;
    ctx.out.write_json("snapshot.json", &pool)?;
    Ok(Status::Passed)
}

/// Per-agent fits on every phase-1 prediction, in log order.
#[derive(Debug, Serialize)]
struct BaselineFits {
    temperature: Vec<FittedBaseline>,
    platt: Vec<FittedBaseline>,
    histogram: Vec<FittedBaseline>,
}

fn fit_all(tasks: &[TaskResponses], config: &HarnessConfig) -> Result<BaselineFits> {
    let mut per_agent: BTreeMap<&str, Vec<(f64, bool)>> = BTreeMap::new();
    for t in tasks {
        for r in &t.responses {
            per_agent.entry(&r.agent).or_default().push((r.confidence, r.correct));
        }
    }
    let eps = config.calibrator.epsilon;
    let mut fits = BaselineFits {
        temperature: Vec::new(),
        platt: Vec::new(),
        histogram: Vec::new(),
    };
    for (agent, calib) in &per_agent {
        fits.temperature.push(fit_temperature(agent, calib, eps)?);
        fits.platt.push(fit_platt(agent, calib, eps)?);
        fits.histogram.push(fit_histogram(agent, calib, config.ece_bins)?);
    }
    Ok(fits)
}

fn phase_tasks(
    observations: &[Observation],
    tag: &str,
    channel: ConfidenceChannel,
    log: &Path,
) -> Result<Vec<TaskResponses>> {
    if !observations.iter().any(|o| o.phase.as_deref() == Some(tag)) {
        bail!("{}: no records with phase {tag}", log.display());
    }
    tasks_in_phase(observations, tag, channel).with_context(|| format!("{}", log.display()))
}

fn replay(log: &Path, phase1: &str, phase2: &str, channel: ConfidenceChannel, ctx: &mut Context) -> Result<Status> {
    let observations = ctx.observations(log)?;
    let p1 = phase_tasks(&observations, phase1, channel, log)?;
    let p2 = phase_tasks(&observations, phase2, channel, log)?;
    let report = run_shift(&p1, &p2, &ctx.config, ctx.exec)?;
    print_report(&report);
    write_experiment(ctx.out, "shift", &report)?;

    let bins = ctx.config.ece_bins;
    let mut pool = Pool::new(ctx.config.calibrator)?;
    learn(&mut pool, &p1)?;
    ctx.out.write_json("snapshot.json", &pool)?;
    ctx.out.write_json("baselines.json", &fit_all(&p1, &ctx.config)?)?;
    let raw: Vec<(f64, bool)> = p2
        .iter()
        .flat_map(|t| t.responses.iter().map(|r| (r.confidence, r.correct)))
        .collect();
    let online = replay_online(&mut pool, &p2)?;
    ctx.out.write_reliability("reliability_raw.csv", &ece(&raw, bins)?.reliability)?;
    ctx.out.write_reliability("reliability_margin.csv", &ece(&online, bins)?.reliability)?;
    Ok(Status::Passed)
}

fn transfer(source: &Path, target: &Path, channel: ConfidenceChannel, ctx: &mut Context) -> Result<Status> {
    let src = group_tasks(&ctx.observations(source)?, channel).with_context(|| format!("{}", source.display()))?;
    let tgt = group_tasks(&ctx.observations(target)?, channel).with_context(|| format!("{}", target.display()))?;
    let report = run_transfer(&src, &tgt, &ctx.config, ctx.exec)?;
    print_report(&report);
    write_experiment(ctx.out, "transfer", &report)?;
    let mut pool = Pool::new(ctx.config.calibrator)?;
    learn(&mut pool, &src)?;
    ctx.out.write_json("snapshot.json", &pool)?;
    Ok(Status::Passed)
}

fn dynamic_pool(
    name: ScenarioName,
    spec_path: &Path,
    steps: usize,
    window: usize,
    ctx: &mut Context,
) -> Result<Status> {
    let spec = ctx.scenario_spec(spec_path)?;
    let tasks = group_tasks(&generate(&spec)?, ConfidenceChannel::Verbalized)?;
    let scenario = match name {
        ScenarioName::Dropout => Scenario::dropout(),
        ScenarioName::Coldstart => Scenario::cold_start(),
        ScenarioName::Rolling => Scenario::rolling(),
    };
    let settings = DynamicSettings {
        steps,
        window,
        ..DynamicSettings::default()
    };
    let report = run_dynamic_pool(&scenario, &tasks, &settings, &ctx.config, ctx.exec)?;
    if let Some(d) = &report.dropout {
        println!(
            "dropout of {}: windowed ECE {} before, {} after (pooled sd {}), stable: {}",
            d.dropped.join(", "),
            pct(d.pre_mean),
            pct(d.post_mean),
            pct(d.pooled_std),
            d.pass
        );
    }
    if let Some(c) = &report.cold_start {
        for (i, k) in c.checkpoints.iter().enumerate() {
            println!(
                "cold start after {k:>3} observations: shrinkage {}, none {}",
                pct(c.shrinkage[i].mean),
                pct(c.no_shrinkage[i].mean)
            );
        }
        println!("shrinkage lower at every checkpoint: {}", c.pass);
    }
    if let Some(r) = &report.rolling {
        println!(
            "rolling: {} swaps per run, ECE slope per segment {:.2e} [{:.2e}, {:.2e}], flat: {}",
            r.swaps_per_run, r.slope.mean, r.slope.ci_low, r.slope.ci_high, r.pass
        );
    }
    ctx.out.write_json("dynamic_pool.json", &report)?;
    let rows: Vec<Vec<String>> = report
        .window_ends
        .iter()
        .zip(&report.mean_window_series)
        .map(|(e, v)| vec![e.to_string(), v.to_string()])
        .collect();
    ctx.out.write_csv("window_series.csv", &["window_end".into(), "mean_ece".into()], &rows)?;
    Ok(Status::Passed)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    grid: AblationGrid,
    conditions: Vec<ConditionFile>,
}

/// A shift condition read from a log, or generated from a scenario file
/// with phase tags.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionFile {
    name: String,
    #[serde(default)]
    log: Option<PathBuf>,
    #[serde(default)]
    spec: Option<PathBuf>,
    phase1: String,
    phase2: String,
    #[serde(default)]
    channel: ConfidenceChannel,
}

fn ablate(grid_path: &Path, ctx: &mut Context) -> Result<Status> {
    let bytes = ctx.read(grid_path)?;
    let file: GridFile = parse_json(&bytes, grid_path, "ablation grid")?;
    let base = grid_path.parent().unwrap_or(Path::new("."));
    let mut conditions = Vec::new();
    for c in &file.conditions {
        let observations = match (&c.log, &c.spec) {
            (Some(log), None) => {
                let path = absolute(&base.join(log))?;
                ctx.observations(&path)?
            }
            (None, Some(spec)) => {
                let path = absolute(&base.join(spec))?;
                generate(&ctx.scenario_spec(&path)?)?
            }
            _ => bail!(
                "{}: condition {} needs exactly one of `log` or `spec`",
                grid_path.display(),
                c.name
            ),
        };
        let here = PathBuf::from(format!("{} (condition {})", grid_path.display(), c.name));
        conditions.push(ShiftCondition {
            name: c.name.clone(),
            phase1: phase_tasks(&observations, &c.phase1, c.channel, &here)?,
            phase2: phase_tasks(&observations, &c.phase2, c.channel, &here)?,
        });
    }
    let report: AblationReport = run_ablation(&file.grid, &conditions, &ctx.config, ctx.exec)?;
    let mut rows = Vec::new();
    for (i, cell) in report.cells.iter().enumerate() {
        for (j, cond) in report.conditions.iter().enumerate() {
            let m = &report.ece[i][j];
            println!("{cell:<32} {cond:<16} {:>8}  [{}, {}]", pct(m.mean), pct(m.ci_low), pct(m.ci_high));
            rows.push(vec![
                cell.clone(),
                cond.clone(),
                m.mean.to_string(),
                m.std.to_string(),
                m.ci_low.to_string(),
                m.ci_high.to_string(),
            ]);
        }
    }
    for (j, cond) in report.conditions.iter().enumerate() {
        println!("best under {cond}: {}", report.cells[report.best_cell(j)]);
    }
    ctx.out.write_json("ablation.json", &report)?;
    let header = ["cell", "condition", "ece_mean", "ece_std", "ci_low", "ci_high"].map(String::from);
    ctx.out.write_csv("ablation.csv", &header, &rows)?;
    Ok(Status::Passed)
}
