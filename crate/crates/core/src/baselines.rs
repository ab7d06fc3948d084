//! Design-time calibration baselines: fitted once, applied frozen.
//!
//! Only stated confidences are available (no logits), so temperature and
//! Platt scaling operate on `logit(c)` with `c` clamped to
//! `[epsilon, 1 - epsilon]`.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_confidence, Error, Result};
use crate::metrics::bin_of;

pub const TEMPERATURE_MIN: f64 = 0.05;
pub const TEMPERATURE_MAX: f64 = 20.0;
const TEMPERATURE_GRID: usize = 200;
const TEMPERATURE_TOL: f64 = 1e-4;
const PLATT_MAX_ITER: usize = 100;
const PLATT_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Temperature { temperature: f64 },
    Platt { slope: f64, intercept: f64 },
    Histogram { edges: Vec<f64>, values: Vec<f64> },
}

/// How a fit terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// Optimum at the edge of the search range, or single-class data.
    Boundary,
    /// Newton failed; parameters come from coordinate grid search.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedBaseline {
    pub agent: String,
    pub kind: BaselineKind,
    pub epsilon: f64,
    pub status: FitStatus,
}

impl FittedBaseline {
    /// Maps a stated confidence through the frozen fit. Total on [0, 1].
    pub fn apply(&self, confidence: f64) -> f64 {
        match &self.kind {
            BaselineKind::Temperature { temperature } => {
                sigmoid(logit(confidence, self.epsilon) / temperature)
            }
            BaselineKind::Platt { slope, intercept } => {
                sigmoid(slope * logit(confidence, self.epsilon) + intercept)
            }
            BaselineKind::Histogram { values, .. } => {
                values[bin_of(confidence.clamp(0.0, 1.0), values.len())]
            }
        }
    }
}

/// `ln(c / (1 - c))` with `c` clamped to `[epsilon, 1 - epsilon]`.
pub fn logit(confidence: f64, epsilon: f64) -> f64 {
    let c = confidence.clamp(epsilon, 1.0 - epsilon);
    libm::log(c / (1.0 - c))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

/// Negative log-likelihood of outcomes under `sigmoid(z_i)`.
fn logistic_nll(z: impl Iterator<Item = (f64, bool)>) -> f64 {
    z.map(|(z, o)| if o { softplus(-z) } else { softplus(z) }).sum()
}

fn validate(calib: &[(f64, bool)]) -> Result<()> {
    if calib.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    for &(c, _) in calib {
        check_confidence(c)?;
    }
    Ok(())
}

fn single_class(calib: &[(f64, bool)]) -> bool {
    calib.iter().all(|&(_, o)| o) || calib.iter().all(|&(_, o)| !o)
}

fn temperature_nll(logits: &[(f64, bool)], t: f64) -> f64 {
    logistic_nll(logits.iter().map(|&(x, o)| (x / t, o)))
}

/// Fits `T` minimizing NLL of `sigmoid(logit(c) / T)`: a 200-point
/// log-spaced scan over `[0.05, 20]`, refined by golden-section search.
pub fn fit_temperature(
    agent: &str,
    calib: &[(f64, bool)],
    epsilon: f64,
) -> Result<FittedBaseline> {
    validate(calib)?;
    let logits: Vec<(f64, bool)> = calib.iter().map(|&(c, o)| (logit(c, epsilon), o)).collect();
    let ratio = TEMPERATURE_MAX / TEMPERATURE_MIN;
    let grid: Vec<f64> = (0..TEMPERATURE_GRID)
        .map(|i| TEMPERATURE_MIN * libm::pow(ratio, i as f64 / (TEMPERATURE_GRID - 1) as f64))
        .collect();
    let (best_idx, mut best_nll) = grid
        .iter()
        .map(|&t| temperature_nll(&logits, t))
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let mut best_t = grid[best_idx];
    let lo = grid[best_idx.saturating_sub(1)];
    let hi = grid[(best_idx + 1).min(TEMPERATURE_GRID - 1)];
    let refined = golden_section(lo, hi, TEMPERATURE_TOL, |t| temperature_nll(&logits, t));
    let refined_nll = temperature_nll(&logits, refined);
    if refined_nll < best_nll {
        best_t = refined;
        best_nll = refined_nll;
    }
    let _ = best_nll;
    let at_edge = best_idx == 0 || best_idx == TEMPERATURE_GRID - 1;
    Ok(FittedBaseline {
        agent: agent.into(),
        kind: BaselineKind::Temperature {
            temperature: best_t,
        },
        epsilon,
        status: if at_edge || single_class(calib) {
            FitStatus::Boundary
        } else {
            FitStatus::Converged
        },
    })
}

/// Minimizes a unimodal `f` on `[lo, hi]` until the bracket is narrower than
/// `tol`; returns the bracket midpoint.
fn golden_section(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    (lo + hi) / 2.0
}

fn platt_nll(logits: &[(f64, bool)], a: f64, b: f64) -> f64 {
    logistic_nll(logits.iter().map(|&(x, o)| (a * x + b, o)))
}

/// Mean gradient and Hessian of the Platt NLL.
fn platt_derivatives(logits: &[(f64, bool)], a: f64, b: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut g = [0.0; 2];
    let mut h = [[0.0; 2]; 2];
    for &(x, o) in logits {
        let p = sigmoid(a * x + b);
        let r = p - if o { 1.0 } else { 0.0 };
        let w = p * (1.0 - p);
        g[0] += r * x;
        g[1] += r;
        h[0][0] += w * x * x;
        h[0][1] += w * x;
        h[1][1] += w;
    }
    let n = logits.len() as f64;
    g[0] /= n;
    g[1] /= n;
    h[0][0] /= n;
    h[0][1] /= n;
    h[1][1] /= n;
    h[1][0] = h[0][1];
    (g, h)
}

/// Levenberg-damped Newton iterations from the identity map `(1, 0)`.
fn platt_newton(logits: &[(f64, bool)]) -> Option<(f64, f64)> {
    let (mut a, mut b) = (1.0, 0.0);
    let mut current = platt_nll(logits, a, b);
    let mut damping = 1e-9;
    for _ in 0..PLATT_MAX_ITER {
        let (g, h) = platt_derivatives(logits, a, b);
        if libm::sqrt(g[0] * g[0] + g[1] * g[1]) < PLATT_GRAD_TOL {
            return Some((a, b));
        }
        let mut accepted = false;
        for _ in 0..40 {
            let m00 = h[0][0] + damping;
            let m11 = h[1][1] + damping;
            let det = m00 * m11 - h[0][1] * h[1][0];
            if det > 0.0 && det.is_finite() {
                let da = -(m11 * g[0] - h[0][1] * g[1]) / det;
                let db = -(m00 * g[1] - h[1][0] * g[0]) / det;
                let candidate = platt_nll(logits, a + da, b + db);
                if candidate.is_finite() && candidate <= current {
                    a += da;
                    b += db;
                    current = candidate;
                    damping = (damping / 10.0).max(1e-12);
                    accepted = true;
                    break;
                }
            }
            damping *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    let (g, _) = platt_derivatives(logits, a, b);
    (libm::sqrt(g[0] * g[0] + g[1] * g[1]) < PLATT_GRAD_TOL).then_some((a, b))
}

/// Coordinate search over `[-20, 20]^2` with a shrinking step.
fn platt_grid(logits: &[(f64, bool)]) -> (f64, f64) {
    let (mut a, mut b) = (1.0, 0.0);
    let mut best = platt_nll(logits, a, b);
    let mut span = 20.0;
    for _ in 0..60 {
        for coord in 0..2 {
            for k in -20..=20 {
                let step = span * f64::from(k) / 20.0;
                let (ca, cb) = if coord == 0 {
                    ((a + step).clamp(-20.0, 20.0), b)
                } else {
                    (a, (b + step).clamp(-20.0, 20.0))
                };
                let v = platt_nll(logits, ca, cb);
                if v < best {
                    best = v;
                    a = ca;
                    b = cb;
                }
            }
        }
        span *= 0.7;
    }
    (a, b)
}

/// Fits `(a, b)` of `sigmoid(a * logit(c) + b)` by maximum likelihood.
pub fn fit_platt(agent: &str, calib: &[(f64, bool)], epsilon: f64) -> Result<FittedBaseline> {
    validate(calib)?;
    let make = |slope, intercept, status| FittedBaseline {
        agent: agent.into(),
        kind: BaselineKind::Platt { slope, intercept },
        epsilon,
        status,
    };
    if single_class(calib) {
        // no finite optimum; the best constant is the (clamped) base rate
        let rate = if calib[0].1 { 1.0 } else { 0.0 };
        return Ok(make(0.0, logit(rate, epsilon), FitStatus::Boundary));
    }
    let logits: Vec<(f64, bool)> = calib.iter().map(|&(c, o)| (logit(c, epsilon), o)).collect();
    Ok(match platt_newton(&logits) {
        Some((a, b)) => make(a, b, FitStatus::Converged),
        None => {
            let (a, b) = platt_grid(&logits);
            make(a, b, FitStatus::Fallback)
        }
    })
}

/// Equal-width histogram binning; empty bins map to their midpoint.
pub fn fit_histogram(
    agent: &str,
    calib: &[(f64, bool)],
    bin_count: usize,
) -> Result<FittedBaseline> {
    validate(calib)?;
    if bin_count == 0 {
        return Err(Error::InvalidConfig("bin_count must be at least 1".into()));
    }
    let mut counts = alloc::vec![0usize; bin_count];
    let mut hits = alloc::vec![0usize; bin_count];
    for &(c, o) in calib {
        let b = bin_of(c, bin_count);
        counts[b] += 1;
        hits[b] += usize::from(o);
    }
    let edges = (0..=bin_count).map(|b| b as f64 / bin_count as f64).collect();
    let values = (0..bin_count)
        .map(|b| {
            if counts[b] == 0 {
                (b as f64 + 0.5) / bin_count as f64
            } else {
                hits[b] as f64 / counts[b] as f64
            }
        })
        .collect();
    Ok(FittedBaseline {
        agent: agent.into(),
        kind: BaselineKind::Histogram { edges, values },
        epsilon: 0.0,
        status: FitStatus::Converged,
    })
}
