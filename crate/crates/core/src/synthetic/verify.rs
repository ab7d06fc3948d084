//! Monte-Carlo verifiers. Every replication draws from its own stream and
//! replications are reduced in fixed chunk order, so reports do not depend
//! on the executor.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::theory;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::rng::{derive_seed, substream};

const CHUNK: usize = 256;

fn run_chunks<E, T, F>(exec: &E, replications: usize, f: F) -> Vec<T>
where
    E: Executor,
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let chunks = replications.div_ceil(CHUNK);
    exec.map(chunks, |c| f(c * CHUNK..((c + 1) * CHUNK).min(replications)))
}

fn check_rate(name: &str, alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must lie in (0, 1), got {alpha}")))
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")))
    }
}

fn check_replications(replications: usize) -> Result<()> {
    if replications < 2 {
        return Err(Error::InvalidConfig("replications must be at least 2".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormReport {
    pub cases: usize,
    pub steps: usize,
    /// Largest gap between the iterated and unrolled estimates.
    pub max_abs_diff: f64,
    /// Largest deviation of the unrolled weights' sum from one.
    pub max_weight_sum_error: f64,
    pub pass: bool,
}

/// Compares the iterated update with its unrolled form on `cases` random
/// (rate, start, accuracy) draws of `steps` outcomes each.
pub fn verify_closed_form(cases: usize, steps: usize, seed: u64) -> ClosedFormReport {
    let seed = derive_seed(seed, "closed-form");
    let mut max_abs_diff: f64 = 0.0;
    let mut max_weight_sum_error: f64 = 0.0;
    for case in 0..cases {
        let mut rng = substream(seed, case as u64);
        let alpha: f64 = rng.random_range(0.001..0.5);
        let initial: f64 = rng.random();
        let theta: f64 = rng.random();
        let outcomes: Vec<f64> = (0..steps)
            .map(|_| if rng.random::<f64>() < theta { 1.0 } else { 0.0 })
            .collect();
        let mut est = initial;
        for x in &outcomes {
            est += alpha * (x - est);
        }
        let unrolled = theory::ewma_unrolled(alpha, initial, &outcomes);
        max_abs_diff = max_abs_diff.max(libm::fabs(est - unrolled));
        let sum: f64 = theory::ewma_weights(alpha, steps).iter().sum();
        max_weight_sum_error = max_weight_sum_error.max(libm::fabs(sum - 1.0));
    }
    ClosedFormReport {
        cases,
        steps,
        max_abs_diff,
        max_weight_sum_error,
        pass: max_abs_diff <= 1e-12 && max_weight_sum_error <= 1e-12,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub alpha: f64,
    pub theta: f64,
    pub initial: f64,
    pub steps: usize,
    pub replications: usize,
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    pub standard_error: f64,
    pub predicted_mean: f64,
    pub predicted_variance: f64,
    /// Means agree within four standard errors.
    pub mean_pass: bool,
    /// Variances agree within 5% relative.
    pub variance_pass: bool,
    pub pass: bool,
}

/// Distribution of the estimate after `steps` stationary outcomes.
pub fn verify_convergence<E: Executor>(
    alpha: f64,
    theta: f64,
    initial: f64,
    steps: usize,
    replications: usize,
    seed: u64,
    exec: &E,
) -> Result<ConvergenceReport> {
    check_rate("alpha", alpha)?;
    check_unit("theta", theta)?;
    check_unit("initial", initial)?;
    check_replications(replications)?;
    let seed = derive_seed(seed, "convergence");
    let finals: Vec<f64> = run_chunks(exec, replications, |reps| {
        reps.map(|r| {
            let mut rng = substream(seed, r as u64);
            let mut est = initial;
            for _ in 0..steps {
                let x = if rng.random::<f64>() < theta { 1.0 } else { 0.0 };
                est += alpha * (x - est);
            }
            est
        })
        .collect::<Vec<_>>()
    })
    .concat();
    let empirical_mean = crate::stats::mean(&finals);
    let empirical_variance = crate::stats::variance(&finals);
    let standard_error = libm::sqrt(empirical_variance / replications as f64);
    let predicted_mean = theory::expected_estimate(alpha, theta, initial, steps);
    let predicted_variance = theory::estimate_variance(alpha, theta, steps);
    let mean_pass = if standard_error == 0.0 {
        libm::fabs(empirical_mean - predicted_mean) < 1e-12
    } else {
        libm::fabs(empirical_mean - predicted_mean) <= 4.0 * standard_error
    };
    let variance_pass = if predicted_variance == 0.0 {
        empirical_variance == 0.0
    } else {
        libm::fabs(empirical_variance - predicted_variance) <= 0.05 * predicted_variance
    };
    Ok(ConvergenceReport {
        alpha,
        theta,
        initial,
        steps,
        replications,
        empirical_mean,
        empirical_variance,
        standard_error,
        predicted_mean,
        predicted_variance,
        mean_pass,
        variance_pass,
        pass: mean_pass && variance_pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub alpha: f64,
    pub theta_before: f64,
    pub theta_after: f64,
    pub epsilon: f64,
    pub replications: usize,
    pub predicted_steps: f64,
    /// First step after the jump where the replication-averaged bias is
    /// within `epsilon`; `None` if the horizon ran out.
    pub empirical_steps: Option<usize>,
    pub horizon: usize,
    /// Replication-averaged bias `|mean(estimate) - theta_after|` per step.
    pub bias: Vec<f64>,
    pub pass: bool,
}

/// Recovery after an instantaneous jump from `theta_before` (where the
/// estimate starts, fully converged) to `theta_after`.
pub fn verify_tracking<E: Executor>(
    alpha: f64,
    theta_before: f64,
    theta_after: f64,
    epsilon: f64,
    replications: usize,
    seed: u64,
    exec: &E,
) -> Result<TrackingReport> {
    check_rate("alpha", alpha)?;
    check_unit("theta_before", theta_before)?;
    check_unit("theta_after", theta_after)?;
    check_replications(replications)?;
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    let predicted_steps = theory::recovery_steps(alpha, theta_after - theta_before, epsilon);
    let horizon = libm::ceil(3.0 * predicted_steps) as usize + 50;
    let seed = derive_seed(seed, "tracking");
    let sums = run_chunks(exec, replications, |reps| {
        let mut sum = vec![0.0; horizon + 1];
        for r in reps {
            let mut rng = substream(seed, r as u64);
            let mut est = theta_before;
            sum[0] += est;
            for slot in sum.iter_mut().skip(1) {
                let x = if rng.random::<f64>() < theta_after { 1.0 } else { 0.0 };
                est += alpha * (x - est);
                *slot += est;
            }
        }
        sum
    });
    let mut total = vec![0.0; horizon + 1];
    for chunk in &sums {
        for (t, s) in total.iter_mut().zip(chunk) {
            *t += s;
        }
    }
    let bias: Vec<f64> = total
        .iter()
        .map(|s| libm::fabs(s / replications as f64 - theta_after))
        .collect();
    let empirical_steps = bias.iter().position(|&b| b <= epsilon);
    let pass = match empirical_steps {
        None => false,
        Some(n) if predicted_steps == 0.0 => n == 0,
        Some(n) => libm::fabs(n as f64 - predicted_steps) <= 0.2 * predicted_steps,
    };
    Ok(TrackingReport {
        alpha,
        theta_before,
        theta_after,
        epsilon,
        replications,
        predicted_steps,
        empirical_steps,
        horizon,
        bias,
        pass,
    })
}

/// Drift scenario for the learning-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UShapeSettings {
    pub alphas: Vec<f64>,
    /// Per-step change of the true accuracy.
    pub drift: f64,
    /// True accuracy (and initial estimate) at step 0.
    pub theta_start: f64,
    /// Steps discarded before measuring.
    pub burn_in: usize,
    /// Steps over which the absolute error is averaged.
    pub window: usize,
}

impl Default for UShapeSettings {
    fn default() -> Self {
        Self {
            alphas: vec![0.005, 0.01, 0.02, 0.04, 0.08, 0.16, 0.32],
            drift: 2e-4,
            theta_start: 0.35,
            burn_in: 1000,
            window: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UShapeRow {
    pub alpha: f64,
    pub empirical_error: f64,
    /// Lag-plus-noise bound averaged over the measurement window.
    pub bound: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UShapeReport {
    pub settings: UShapeSettings,
    pub replications: usize,
    pub rows: Vec<UShapeRow>,
    pub argmin_alpha: f64,
    /// The smallest error sits strictly inside the grid.
    pub interior_minimum: bool,
    /// Every row within its bound, and (under drift) an interior minimum.
    pub pass: bool,
}

fn drifting_theta(settings: &UShapeSettings, t: usize) -> f64 {
    let theta = settings.theta_start + settings.drift * t as f64;
    if settings.drift == 0.0 {
        theta.clamp(0.0, 1.0)
    } else {
        theta.clamp(0.02, 0.98)
    }
}

/// Mean absolute tracking error per learning rate under linear drift. All
/// rates see the same outcome draws within a replication.
pub fn verify_ushape<E: Executor>(
    settings: &UShapeSettings,
    replications: usize,
    seed: u64,
    exec: &E,
) -> Result<UShapeReport> {
    if settings.alphas.is_empty() {
        return Err(Error::InvalidConfig("alpha grid is empty".into()));
    }
    for &a in &settings.alphas {
        check_rate("alpha", a)?;
    }
    check_unit("theta_start", settings.theta_start)?;
    check_replications(replications)?;
    if !(settings.drift >= 0.0 && settings.drift.is_finite()) {
        return Err(Error::InvalidConfig("drift must be finite and non-negative".into()));
    }
    if settings.window == 0 {
        return Err(Error::InvalidConfig("window must be positive".into()));
    }
    let k = settings.alphas.len();
    let total_steps = settings.burn_in + settings.window;
    let seed = derive_seed(seed, "ushape");
    let sums = run_chunks(exec, replications, |reps| {
        let mut sum = vec![0.0; k];
        let mut est = vec![0.0; k];
        for r in reps {
            let mut rng = substream(seed, r as u64);
            est.fill(settings.theta_start);
            for t in 1..=total_steps {
                let theta = drifting_theta(settings, t);
                let x = if rng.random::<f64>() < theta { 1.0 } else { 0.0 };
                for (e, &a) in est.iter_mut().zip(&settings.alphas) {
                    *e += a * (x - *e);
                }
                if t > settings.burn_in {
                    for (s, e) in sum.iter_mut().zip(&est) {
                        *s += libm::fabs(e - theta);
                    }
                }
            }
        }
        sum
    });
    let mut total = vec![0.0; k];
    for chunk in &sums {
        for (t, s) in total.iter_mut().zip(chunk) {
            *t += s;
        }
    }
    let denom = (replications * settings.window) as f64;
    let rows: Vec<UShapeRow> = settings
        .alphas
        .iter()
        .zip(&total)
        .map(|(&alpha, &s)| {
            let bound = (settings.burn_in + 1..=total_steps)
                .map(|t| theory::tracking_bound(alpha, settings.drift, drifting_theta(settings, t)))
                .sum::<f64>()
                / settings.window as f64;
            let empirical_error = s / denom;
            UShapeRow {
                alpha,
                empirical_error,
                bound,
                within_bound: empirical_error <= bound,
            }
        })
        .collect();
    let argmin = rows
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if r.empirical_error < rows[best].empirical_error { i } else { best });
    let interior_minimum = argmin > 0 && argmin + 1 < rows.len();
    let all_within = rows.iter().all(|r| r.within_bound);
    Ok(UShapeReport {
        settings: settings.clone(),
        replications,
        argmin_alpha: rows[argmin].alpha,
        interior_minimum,
        pass: all_within && (settings.drift == 0.0 || interior_minimum),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetricReport {
    pub alpha_up: f64,
    pub alpha_down: f64,
    pub theta: f64,
    pub steps: usize,
    pub replications: usize,
    pub empirical_mean: f64,
    pub predicted_fixed_point: f64,
    pub predicted_bias: f64,
    /// Long-run mean within 0.01 of the predicted fixed point.
    pub pass: bool,
}

/// Long-run mean of the estimate with outcome-dependent rates, started at
/// 0.5.
pub fn verify_asymmetric<E: Executor>(
    alpha_up: f64,
    alpha_down: f64,
    theta: f64,
    steps: usize,
    replications: usize,
    seed: u64,
    exec: &E,
) -> Result<AsymmetricReport> {
    check_rate("alpha_up", alpha_up)?;
    check_rate("alpha_down", alpha_down)?;
    check_unit("theta", theta)?;
    check_replications(replications)?;
    let seed = derive_seed(seed, "asymmetric");
    let finals: Vec<f64> = run_chunks(exec, replications, |reps| {
        reps.map(|r| {
            let mut rng = substream(seed, r as u64);
            let mut est = 0.5;
            for _ in 0..steps {
                if rng.random::<f64>() < theta {
                    est += alpha_up * (1.0 - est);
                } else {
                    est -= alpha_down * est;
                }
            }
            est
        })
        .collect::<Vec<_>>()
    })
    .concat();
    let empirical_mean = crate::stats::mean(&finals);
    let predicted_fixed_point = theory::asymmetric_fixed_point(alpha_up, alpha_down, theta);
    Ok(AsymmetricReport {
        alpha_up,
        alpha_down,
        theta,
        steps,
        replications,
        empirical_mean,
        predicted_fixed_point,
        predicted_bias: theory::asymmetric_bias(alpha_up, alpha_down, theta),
        pass: libm::fabs(empirical_mean - predicted_fixed_point) <= 0.01,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub sigma: f64,
    pub probability: f64,
    pub standard_error: f64,
    pub predicted: f64,
    /// Within four standard errors of the quadrature prediction.
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub accuracies: Vec<f64>,
    pub replications: usize,
    pub rows: Vec<SelectionRow>,
    /// Probability never rises by more than three combined standard errors
    /// from one noise level to the next.
    pub monotone: bool,
    pub pass: bool,
}

/// Probability that argmax of `p_i + sigma * z_i` picks agent 0, for each
/// noise scale. Noise draws are shared across scales.
pub fn verify_selection_monotonicity<E: Executor>(
    accuracies: &[f64],
    sigmas: &[f64],
    replications: usize,
    seed: u64,
    exec: &E,
) -> Result<SelectionReport> {
    if accuracies.len() < 2 {
        return Err(Error::InvalidConfig("need at least two agents".into()));
    }
    if accuracies[0] <= accuracies[1] || accuracies[1..].windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidConfig(
            "accuracies must be sorted descending with a strict best".into(),
        ));
    }
    if sigmas.is_empty()
        || sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite()))
        || sigmas.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidConfig("sigma grid must be non-negative and increasing".into()));
    }
    check_replications(replications)?;
    let seed = derive_seed(seed, "selection");
    let n = accuracies.len();
    let counts = run_chunks(exec, replications, |reps| {
        let mut wins = vec![0u64; sigmas.len()];
        let mut z = vec![0.0; n];
        for r in reps {
            let mut rng = substream(seed, r as u64);
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for (w, &sigma) in wins.iter_mut().zip(sigmas) {
                let score = |i: usize| accuracies[i] + sigma * z[i];
                let best = (1..n).fold(0, |b, i| if score(i) > score(b) { i } else { b });
                *w += u64::from(best == 0);
            }
        }
        wins
    });
    let mut wins = vec![0u64; sigmas.len()];
    for chunk in &counts {
        for (w, c) in wins.iter_mut().zip(chunk) {
            *w += c;
        }
    }
    let reps = replications as f64;
    let rows: Vec<SelectionRow> = sigmas
        .iter()
        .zip(&wins)
        .map(|(&sigma, &w)| {
            let probability = w as f64 / reps;
            let standard_error = libm::sqrt(probability * (1.0 - probability) / reps);
            let predicted = theory::selection_probability(accuracies, sigma);
            let gap = libm::fabs(probability - predicted);
            SelectionRow {
                sigma,
                probability,
                standard_error,
                predicted,
                agrees: gap <= 4.0 * standard_error || gap < 1e-9,
            }
        })
        .collect();
    let monotone = rows.windows(2).all(|w| {
        let (a, b) = (w[0].standard_error, w[1].standard_error);
        let slack = 3.0 * libm::sqrt(a * a + b * b);
        w[1].probability <= w[0].probability + slack
    });
    Ok(SelectionReport {
        accuracies: accuracies.to_vec(),
        replications,
        pass: monotone && rows.iter().all(|r| r.agrees),
        rows,
        monotone,
    })
}
