//! Confidence-weighted answer selection and the online selection loop.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calibrator::Pool;
use crate::error::{check_confidence, Error, Result};
use crate::metrics::{ece, EceReport, PairTally};

/// One agent's answer to a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub agent: String,
    /// Equivalence class of the answer; equal classes vote together.
    pub answer_class: String,
    pub confidence: f64,
    pub correct: bool,
}

/// Every response collected for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResponses {
    pub task: String,
    pub responses: Vec<Response>,
}

impl TaskResponses {
    pub fn new(task: impl Into<String>, responses: Vec<Response>) -> Result<Self> {
        let t = Self {
            task: task.into(),
            responses,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidTask {
            task: self.task.clone(),
            reason,
        };
        if self.responses.is_empty() {
            return Err(invalid("no responses".to_string()));
        }
        let mut agents = BTreeSet::new();
        let mut classes: BTreeMap<&str, bool> = BTreeMap::new();
        for r in &self.responses {
            check_confidence(r.confidence).map_err(|_| {
                invalid(format!("agent {} confidence {} outside [0, 1]", r.agent, r.confidence))
            })?;
            if !agents.insert(r.agent.as_str()) {
                return Err(invalid(format!("duplicate agent {}", r.agent)));
            }
            if let Some(&prev) = classes.get(r.answer_class.as_str()) {
                if prev != r.correct {
                    return Err(invalid(format!(
                        "answer class {} has conflicting correctness",
                        r.answer_class
                    )));
                }
            } else {
                classes.insert(r.answer_class.as_str(), r.correct);
            }
        }
        Ok(())
    }

    pub fn raw_confidences(&self) -> Vec<f64> {
        self.responses.iter().map(|r| r.confidence).collect()
    }
}

/// Outcome of selecting an answer for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen_answer_class: String,
    pub chosen_correct: bool,
    /// Calibrated confidences used in the vote, aligned with the responses.
    pub calibrated: Vec<f64>,
    /// Whether any response was correct.
    pub oracle_correct: bool,
    /// Expected correctness of picking a response uniformly at random.
    pub random_expected: f64,
    /// Correctness of the unweighted plurality answer.
    pub majority_correct: bool,
}

/// Weighted vote `s(y) = sum of calibrated confidences answering y`;
/// ties go to the lexicographically smallest answer class.
pub fn select(task: &TaskResponses, calibrated: &[f64]) -> Result<SelectionResult> {
    if task.responses.is_empty() {
        return Err(Error::Empty("task has no responses"));
    }
    if calibrated.len() != task.responses.len() {
        return Err(Error::LengthMismatch {
            left: task.responses.len(),
            right: calibrated.len(),
        });
    }
    if let Some(bad) = calibrated.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(Error::ConfidenceOutOfRange(*bad));
    }
    // class -> (score, votes, correct)
    let mut tally: BTreeMap<&str, (f64, usize, bool)> = BTreeMap::new();
    for (r, &c) in task.responses.iter().zip(calibrated) {
        let entry = tally.entry(r.answer_class.as_str()).or_insert((0.0, 0, r.correct));
        entry.0 += c;
        entry.1 += 1;
    }
    let mut best: Option<(&str, f64, bool)> = None;
    let mut plurality: Option<(usize, bool)> = None;
    for (&class, &(score, votes, correct)) in &tally {
        if best.is_none_or(|(_, s, _)| score > s) {
            best = Some((class, score, correct));
        }
        if plurality.is_none_or(|(v, _)| votes > v) {
            plurality = Some((votes, correct));
        }
    }
    let (class, _, chosen_correct) = best.expect("non-empty tally");
    let correct_count = task.responses.iter().filter(|r| r.correct).count();
    Ok(SelectionResult {
        chosen_answer_class: class.to_string(),
        chosen_correct,
        calibrated: calibrated.to_vec(),
        oracle_correct: correct_count > 0,
        random_expected: correct_count as f64 / task.responses.len() as f64,
        majority_correct: plurality.expect("non-empty tally").1,
    })
}

/// Whether confidences pass through the calibrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Raw,
    Margin,
}

/// Task counts at which cumulative pass@1 is sampled (plus the full stream).
pub const CONVERGENCE_CHECKPOINTS: [usize; 5] = [10, 30, 50, 100, 150];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seen: usize,
    pub pass_at_1: f64,
}

/// Aggregate metrics of one pass over a task stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub mode: Mode,
    pub tasks: usize,
    pub pass_at_1: f64,
    pub oracle: f64,
    pub random_expected: f64,
    pub majority: f64,
    /// `None` when no disagreeing pair occurred.
    pub pairwise_resolution: Option<f64>,
    /// ECE of every confidence used in a vote.
    pub calibration: EceReport,
    pub convergence: Vec<Checkpoint>,
    /// Per-task correctness of the chosen answer, in stream order.
    pub chosen: Vec<bool>,
}

/// Runs the online loop over `tasks` in order: calibrate, select, then (in
/// margin mode) feed every response's outcome to `pool`.
pub fn selection_suite(
    tasks: &[TaskResponses],
    pool: &mut Pool,
    mode: Mode,
    bin_count: usize,
) -> Result<SuiteSummary> {
    if tasks.is_empty() {
        return Err(Error::Empty("no tasks in stream"));
    }
    let mut chosen = Vec::with_capacity(tasks.len());
    let mut oracle = 0usize;
    let mut random = 0.0;
    let mut majority = 0usize;
    let mut tally = PairTally::default();
    let mut predictions = Vec::new();
    for task in tasks {
        let calibrated = match mode {
            Mode::Raw => task.raw_confidences(),
            Mode::Margin => task
                .responses
                .iter()
                .map(|r| pool.calibrate(&r.agent, r.confidence))
                .collect::<Result<Vec<_>>>()?,
        };
        let result = select(task, &calibrated)?;
        tally.add_task(task, &calibrated)?;
        predictions.extend(
            calibrated
                .iter()
                .zip(&task.responses)
                .map(|(&c, r)| (c, r.correct)),
        );
        chosen.push(result.chosen_correct);
        oracle += usize::from(result.oracle_correct);
        majority += usize::from(result.majority_correct);
        random += result.random_expected;
        if mode == Mode::Margin {
            for r in &task.responses {
                pool.observe(&r.agent, r.confidence, r.correct)?;
            }
        }
    }
    let n = tasks.len();
    Ok(SuiteSummary {
        mode,
        tasks: n,
        pass_at_1: fraction(&chosen),
        oracle: oracle as f64 / n as f64,
        random_expected: random / n as f64,
        majority: majority as f64 / n as f64,
        pairwise_resolution: tally.resolution(),
        calibration: ece(&predictions, bin_count)?,
        convergence: convergence_curve(&chosen),
        chosen,
    })
}

fn fraction(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64
}

/// Cumulative pass@1 at each checkpoint not exceeding the stream, then at
/// the full stream length.
pub fn convergence_curve(chosen: &[bool]) -> Vec<Checkpoint> {
    let mut points: Vec<usize> = CONVERGENCE_CHECKPOINTS
        .iter()
        .copied()
        .filter(|&c| c < chosen.len())
        .collect();
    if !chosen.is_empty() {
        points.push(chosen.len());
    }
    points
        .into_iter()
        .map(|seen| Checkpoint {
            seen,
            pass_at_1: fraction(&chosen[..seen]),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrator::CalibratorConfig;
    use alloc::vec;

    fn resp(agent: &str, class: &str, confidence: f64, correct: bool) -> Response {
        Response {
            agent: agent.to_string(),
            answer_class: class.to_string(),
            confidence,
            correct,
        }
    }

    #[test]
    fn singleton_is_chosen() {
        let t = TaskResponses::new("t", vec![resp("a", "x", 0.1, false)]).unwrap();
        let r = select(&t, &[0.1]).unwrap();
        assert_eq!(r.chosen_answer_class, "x");
        assert!(!r.oracle_correct);
        assert_eq!(r.random_expected, 0.0);
    }

    #[test]
    fn weighted_vote_beats_single_confident_agent() {
        let t = TaskResponses::new(
            "t",
            vec![
                resp("a", "x", 0.5, true),
                resp("b", "x", 0.4, true),
                resp("c", "y", 0.8, false),
            ],
        )
        .unwrap();
        let r = select(&t, &[0.5, 0.4, 0.8]).unwrap();
        assert_eq!(r.chosen_answer_class, "x");
        assert!(r.chosen_correct && r.majority_correct && r.oracle_correct);
        assert!((r.random_expected - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_smallest_class() {
        let t = TaskResponses::new("t", vec![resp("a", "y", 0.6, true), resp("b", "x", 0.6, false)])
            .unwrap();
        let r = select(&t, &[0.6, 0.6]).unwrap();
        assert_eq!(r.chosen_answer_class, "x");
        assert!(!r.chosen_correct);
        assert!(!r.majority_correct);
    }

    #[test]
    fn validation_catches_bad_tasks() {
        assert!(TaskResponses::new("t", vec![]).is_err());
        assert!(TaskResponses::new("t", vec![resp("a", "x", 0.5, true), resp("a", "y", 0.5, false)])
            .is_err());
        assert!(TaskResponses::new("t", vec![resp("a", "x", 0.5, true), resp("b", "x", 0.5, false)])
            .is_err());
        assert!(TaskResponses::new("t", vec![resp("a", "x", 1.3, true)]).is_err());
        let t = TaskResponses::new("t", vec![resp("a", "x", 0.5, true)]).unwrap();
        assert!(select(&t, &[]).is_err());
    }

    #[test]
    fn raw_equals_margin_on_first_task() {
        let tasks = vec![TaskResponses::new(
            "t0",
            vec![resp("a", "x", 0.9, false), resp("b", "y", 0.6, true), resp("c", "y", 0.2, true)],
        )
        .unwrap()];
        let cfg = CalibratorConfig::default();
        let raw = selection_suite(&tasks, &mut Pool::new(cfg).unwrap(), Mode::Raw, 10).unwrap();
        let margin = selection_suite(&tasks, &mut Pool::new(cfg).unwrap(), Mode::Margin, 10).unwrap();
        assert_eq!(raw.chosen, margin.chosen);
        assert_eq!(raw.pairwise_resolution, margin.pairwise_resolution);
    }

    #[test]
    fn convergence_checkpoints() {
        let chosen: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let curve = convergence_curve(&chosen);
        let seen: Vec<usize> = curve.iter().map(|c| c.seen).collect();
        assert_eq!(seen, vec![10, 30, 40]);
        assert_eq!(curve[0].pass_at_1, 0.5);
    }
}
