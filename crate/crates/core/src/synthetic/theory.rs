//! Closed-form predictions for the EWMA estimator and for noisy selection.
//!
//! These are evaluated independently of any simulation and serve as the
//! reference column of every verifier report.

use alloc::vec::Vec;

/// Weights of the unrolled EWMA after `t` steps: index 0 is the weight on
/// the initial value, index `tau` (1-based) the weight on outcome `tau`.
pub fn ewma_weights(alpha: f64, t: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(t + 1);
    w.push(libm::pow(1.0 - alpha, t as f64));
    for tau in 1..=t {
        w.push(alpha * libm::pow(1.0 - alpha, (t - tau) as f64));
    }
    w
}

/// Unrolled EWMA of `outcomes` from `initial`.
pub fn ewma_unrolled(alpha: f64, initial: f64, outcomes: &[f64]) -> f64 {
    let w = ewma_weights(alpha, outcomes.len());
    w[0] * initial + outcomes.iter().zip(&w[1..]).map(|(x, w)| w * x).sum::<f64>()
}

/// Expected estimate after `t` i.i.d. Bernoulli(`theta`) outcomes.
pub fn expected_estimate(alpha: f64, theta: f64, initial: f64, t: usize) -> f64 {
    theta + libm::pow(1.0 - alpha, t as f64) * (initial - theta)
}

/// Variance of the estimate after `t` i.i.d. Bernoulli(`theta`) outcomes.
pub fn estimate_variance(alpha: f64, theta: f64, t: usize) -> f64 {
    alpha / (2.0 - alpha) * theta * (1.0 - theta) * (1.0 - libm::pow(1.0 - alpha, 2.0 * t as f64))
}

/// Steps for the expected bias after a jump of `delta` to fall to
/// `epsilon`; zero when the jump is already within tolerance.
pub fn recovery_steps(alpha: f64, delta: f64, epsilon: f64) -> f64 {
    let delta = libm::fabs(delta);
    if delta <= epsilon {
        return 0.0;
    }
    libm::log(delta / epsilon) / alpha
}

/// Lag-plus-noise bound on tracking error under linear drift `drift`.
pub fn tracking_bound(alpha: f64, drift: f64, theta: f64) -> f64 {
    libm::fabs(drift) / (2.0 * alpha) + libm::sqrt(alpha * theta * (1.0 - theta) / (2.0 - alpha))
}

/// Long-run mean of the estimate with outcome-dependent rates.
pub fn asymmetric_fixed_point(alpha_up: f64, alpha_down: f64, theta: f64) -> f64 {
    alpha_up * theta / (alpha_up * theta + alpha_down * (1.0 - theta))
}

/// Absolute bias of [`asymmetric_fixed_point`] relative to `theta`.
pub fn asymmetric_bias(alpha_up: f64, alpha_down: f64, theta: f64) -> f64 {
    theta * (1.0 - theta) * libm::fabs(alpha_up - alpha_down)
        / (alpha_up * theta + alpha_down * (1.0 - theta))
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI)
}

/// Probability that the best of two agents wins under independent Gaussian
/// noise of scale `sigma` on each score.
pub fn two_agent_selection(p_best: f64, p_other: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if p_best > p_other { 1.0 } else { 0.5 };
    }
    normal_cdf((p_best - p_other) / (sigma * core::f64::consts::SQRT_2))
}

/// Probability that agent 0 has the highest noisy score
/// `p_i + sigma * z_i`, by Simpson quadrature over agent 0's noise.
///
/// `accuracies[0]` must be the strict maximum.
pub fn selection_probability(accuracies: &[f64], sigma: f64) -> f64 {
    if accuracies.len() < 2 {
        return 1.0;
    }
    let best = accuracies[0];
    if sigma == 0.0 {
        return if accuracies[1..].iter().all(|&p| best > p) { 1.0 } else { 0.0 };
    }
    let integrand = |z: f64| {
        normal_pdf(z)
            * accuracies[1..]
                .iter()
                .map(|&p| normal_cdf((best - p) / sigma + z))
                .product::<f64>()
    };
    let (lo, hi, n) = (-10.0, 10.0, 4000);
    let h = (hi - lo) / n as f64;
    let mut sum = integrand(lo) + integrand(hi);
    for i in 1..n {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += weight * integrand(lo + i as f64 * h);
    }
    sum * h / 3.0
}
