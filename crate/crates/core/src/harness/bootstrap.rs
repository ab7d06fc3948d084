use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::stats::{mean, quantile_sorted};

/// Stream of the generator behind every resampling run.
pub const BOOTSTRAP_STREAM: u64 = 0;

/// Percentile bootstrap interval of a mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedInterval {
    pub delta_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// 95% percentile interval of the mean of `values`.
///
/// Resample `i` draws `values.len()` indices with `random_range(0..n)` from
/// `substream(seed, BOOTSTRAP_STREAM)`; the interval ends are the linearly
/// interpolated 2.5% and 97.5% quantiles of the sorted resample means.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("bootstrap sample"));
    }
    if resamples == 0 {
        return Err(Error::InvalidConfig("resamples must be at least 1".into()));
    }
    let n = values.len();
    let mut rng = substream(seed, BOOTSTRAP_STREAM);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut sum = 0.0;
            for _ in 0..n {
                sum += values[rng.random_range(0..n)];
            }
            sum / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&means, 0.025), quantile_sorted(&means, 0.975)))
}

/// Paired bootstrap of `mean(a - b)` over aligned per-shuffle values.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<PairedInterval> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (ci_low, ci_high) = bootstrap_mean_ci(&diffs, resamples, seed)?;
    Ok(PairedInterval {
        delta_mean: mean(&diffs),
        ci_low,
        ci_high,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identical_vectors_give_zero_interval() {
        let a = vec![0.3, 0.1, 0.7, 0.2];
        let r = paired_bootstrap(&a, &a, 500, 1).unwrap();
        assert_eq!((r.delta_mean, r.ci_low, r.ci_high), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_difference_is_degenerate() {
        let a = vec![0.75, 1.0, 0.5];
        let b = vec![0.5, 0.75, 0.25];
        let r = paired_bootstrap(&a, &b, 500, 1).unwrap();
        assert_eq!((r.delta_mean, r.ci_low, r.ci_high), (0.25, 0.25, 0.25));
    }

    #[test]
    fn mismatch_and_empty_rejected() {
        assert!(paired_bootstrap(&[1.0], &[1.0, 2.0], 10, 0).is_err());
        assert!(bootstrap_mean_ci(&[], 10, 0).is_err());
        assert!(bootstrap_mean_ci(&[1.0], 0, 0).is_err());
    }
}
