//! Calibration and selection-quality metrics.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_confidence, Error, Result};
use crate::selection::TaskResponses;

/// One equal-width bin of a reliability diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// Zero for empty bins.
    pub mean_confidence: f64,
    /// Zero for empty bins.
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityBins {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceReport {
    /// Expected calibration error as a fraction in [0, 1].
    pub ece: f64,
    pub reliability: ReliabilityBins,
}

/// Bin of `confidence` among `bin_count` equal-width bins, top bin closed.
pub(crate) fn bin_of(confidence: f64, bin_count: usize) -> usize {
    let raw = libm::floor(confidence * bin_count as f64) as usize;
    raw.min(bin_count - 1)
}

/// Expected calibration error over equal-width bins.
pub fn ece(predictions: &[(f64, bool)], bin_count: usize) -> Result<EceReport> {
    if predictions.is_empty() {
        return Err(Error::Empty("no predictions to score"));
    }
    if bin_count == 0 {
        return Err(Error::InvalidConfig("bin_count must be at least 1".into()));
    }
    let mut counts = vec![0usize; bin_count];
    let mut conf_sums = vec![0.0; bin_count];
    let mut correct = vec![0usize; bin_count];
    for &(c, o) in predictions {
        check_confidence(c)?;
        let b = bin_of(c, bin_count);
        counts[b] += 1;
        conf_sums[b] += c;
        correct[b] += usize::from(o);
    }
    let total = predictions.len() as f64;
    let mut value = 0.0;
    let bins = (0..bin_count)
        .map(|b| {
            let n = counts[b];
            let (mean_confidence, mean_accuracy) = if n == 0 {
                (0.0, 0.0)
            } else {
                (conf_sums[b] / n as f64, correct[b] as f64 / n as f64)
            };
            if n > 0 {
                value += (n as f64 / total) * libm::fabs(mean_accuracy - mean_confidence);
            }
            ReliabilityBin {
                low: b as f64 / bin_count as f64,
                high: (b + 1) as f64 / bin_count as f64,
                count: n,
                mean_confidence,
                mean_accuracy,
            }
        })
        .collect();
    Ok(EceReport {
        ece: value,
        reliability: ReliabilityBins { bins },
    })
}

/// Running tally of disagreeing pairs.
///
/// A pair qualifies when the two answer classes differ and exactly one agent
/// is correct. It scores 1 when the correct agent is strictly more
/// confident, 1/2 on an exact tie, 0 otherwise. Scores are kept in
/// half-points so the tally is exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTally {
    pub pairs: u64,
    pub half_points: u64,
}

impl PairTally {
    /// Adds every qualifying pair of one task. `confidences` is aligned with
    /// `task.responses`.
    pub fn add_task(&mut self, task: &TaskResponses, confidences: &[f64]) -> Result<()> {
        if confidences.len() != task.responses.len() {
            return Err(Error::LengthMismatch {
                left: task.responses.len(),
                right: confidences.len(),
            });
        }
        let rs = &task.responses;
        for i in 0..rs.len() {
            for j in (i + 1)..rs.len() {
                if rs[i].answer_class == rs[j].answer_class || rs[i].correct == rs[j].correct {
                    continue;
                }
                let (right, wrong) = if rs[i].correct {
                    (confidences[i], confidences[j])
                } else {
                    (confidences[j], confidences[i])
                };
                self.pairs += 1;
                if right > wrong {
                    self.half_points += 2;
                } else if right == wrong {
                    self.half_points += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: PairTally) {
        self.pairs += other.pairs;
        self.half_points += other.half_points;
    }

    /// Mean pair score; `None` when no pair qualified.
    pub fn resolution(&self) -> Option<f64> {
        (self.pairs > 0).then(|| self.half_points as f64 / (2 * self.pairs) as f64)
    }
}

/// Pairwise resolution over a task list, pooled globally over all
/// qualifying pairs. `confidences[t]` aligns with `tasks[t].responses`.
/// Returns `Ok(None)` when no pair qualifies.
pub fn pairwise_resolution(
    tasks: &[TaskResponses],
    confidences: &[Vec<f64>],
) -> Result<Option<f64>> {
    if tasks.len() != confidences.len() {
        return Err(Error::LengthMismatch {
            left: tasks.len(),
            right: confidences.len(),
        });
    }
    let mut tally = PairTally::default();
    for (task, conf) in tasks.iter().zip(confidences) {
        tally.add_task(task, conf)?;
    }
    Ok(tally.resolution())
}

/// Pairwise resolution of the stated (uncalibrated) confidences.
pub fn raw_pairwise_resolution(tasks: &[TaskResponses]) -> Option<f64> {
    let mut tally = PairTally::default();
    for task in tasks {
        let conf: Vec<f64> = task.responses.iter().map(|r| r.confidence).collect();
        tally
            .add_task(task, &conf)
            .expect("aligned by construction");
    }
    tally.resolution()
}
