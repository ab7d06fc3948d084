//! Observation records and their grouping into per-task response sets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{Response, TaskResponses};

/// One log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: String,
    pub task: String,
    pub confidence: f64,
    #[serde(with = "zero_one")]
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency_samples: Option<Vec<String>>,
}

/// `correct` travels as the integer 0 or 1.
mod zero_one {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        struct ZeroOne;
        impl Visitor<'_> for ZeroOne {
            type Value = bool;

            fn expecting(&self, f: &mut core::fmt::Formatter) -> core::fmt::Result {
                f.write_str("0 or 1")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<bool, E> {
                match v {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(E::invalid_value(de::Unexpected::Unsigned(v), &self)),
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<bool, E> {
                match v {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(E::invalid_value(de::Unexpected::Signed(v), &self)),
                }
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<bool, E> {
                Ok(v)
            }
        }
        d.deserialize_any(ZeroOne)
    }
}

/// Which confidence signal a replay uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceChannel {
    /// The stated `confidence` field.
    #[default]
    Verbalized,
    /// Agreement of `consistency_samples` with the first sample.
    Consistency,
}

/// Fraction of samples equal to the first sample (the first counts itself).
pub fn consistency_confidence<S: AsRef<str>>(samples: &[S]) -> Result<f64> {
    let first = samples
        .first()
        .ok_or(Error::Empty("consistency sample list"))?
        .as_ref();
    let matches = samples.iter().filter(|s| s.as_ref() == first).count();
    Ok(matches as f64 / samples.len() as f64)
}

/// Groups records into tasks, in order of first appearance.
///
/// Records without an `answer_class` get a singleton class of their own, so
/// the weighted vote degenerates to an argmax over calibrated confidence.
pub fn group_tasks(
    observations: &[Observation],
    channel: ConfidenceChannel,
) -> Result<Vec<TaskResponses>> {
    if observations.is_empty() {
        return Err(Error::Empty("no observations"));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: BTreeMap<&str, Vec<Response>> = BTreeMap::new();
    let mut seen: BTreeSet<(&str, &str)> = BTreeSet::new();
    for obs in observations {
        if !seen.insert((obs.task.as_str(), obs.agent.as_str())) {
            return Err(Error::InvalidTask {
                task: obs.task.clone(),
                reason: format!("duplicate record for agent {}", obs.agent),
            });
        }
        let confidence = match channel {
            ConfidenceChannel::Verbalized => obs.confidence,
            ConfidenceChannel::Consistency => {
                let samples = obs.consistency_samples.as_deref().ok_or_else(|| Error::InvalidTask {
                    task: obs.task.clone(),
                    reason: format!("agent {} has no consistency samples", obs.agent),
                })?;
                consistency_confidence(samples)?
            }
        };
        let answer_class = obs
            .answer_class
            .clone()
            .unwrap_or_else(|| format!("~{}", obs.agent));
        grouped
            .entry(obs.task.as_str())
            .or_insert_with(|| {
                order.push(obs.task.as_str());
                Vec::new()
            })
            .push(Response {
                agent: obs.agent.clone(),
                answer_class,
                confidence,
                correct: obs.correct,
            });
    }
    order
        .into_iter()
        .map(|task| {
            let responses = grouped.remove(task).unwrap_or_default();
            TaskResponses::new(task, responses)
        })
        .collect()
}

/// Tasks whose records carry phase tag `phase`. Tasks with mixed tags are an
/// error.
pub fn tasks_in_phase(
    observations: &[Observation],
    phase: &str,
    channel: ConfidenceChannel,
) -> Result<Vec<TaskResponses>> {
    let mut phase_of: BTreeMap<&str, Option<&str>> = BTreeMap::new();
    for obs in observations {
        let tag = obs.phase.as_deref();
        match phase_of.get(obs.task.as_str()) {
            Some(prev) if *prev != tag => {
                return Err(Error::InvalidTask {
                    task: obs.task.clone(),
                    reason: "records disagree on phase".into(),
                })
            }
            _ => {
                phase_of.insert(obs.task.as_str(), tag);
            }
        }
    }
    let selected: Vec<Observation> = observations
        .iter()
        .filter(|o| o.phase.as_deref() == Some(phase))
        .cloned()
        .collect();
    if selected.is_empty() {
        return Err(Error::InvalidScenario(format!("no observations tagged with phase {phase}")));
    }
    group_tasks(&selected, channel)
}
