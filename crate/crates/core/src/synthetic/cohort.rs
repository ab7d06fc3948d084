use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::generate::generate;
use super::scenario::{Accuracy, AgentProfile, ConfidenceLaw, ScenarioSpec};
use crate::error::{Error, Result};
use crate::metrics::raw_pairwise_resolution;
use crate::observation::{group_tasks, ConfidenceChannel};
use crate::stats::pearson;

/// A cohort whose stated confidence runs against its accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedCohort {
    pub spec: ScenarioSpec,
    /// Correlation between each agent's mean stated confidence and its
    /// accuracy.
    pub confidence_accuracy_r: f64,
    /// Pairwise resolution of the stated confidences on the generated stream.
    pub raw_resolution: f64,
}

/// Builds `agents` profiles: one confidently wrong agent (accuracy 0.02,
/// confidence near 0.98) and the rest with accuracies spread from 0.9 down
/// to 0.05 whose confidence rises as accuracy falls. `difficulty` in (0, 1]
/// scales how steep that inversion is.
///
/// Fails if the generated stream does not actually show the inversion.
pub fn make_inverted_cohort(
    agents: usize,
    difficulty: f64,
    length: usize,
    seed: u64,
) -> Result<InvertedCohort> {
    if agents < 2 {
        return Err(Error::InvalidScenario("an inverted cohort needs at least two agents".into()));
    }
    if !(difficulty > 0.0 && difficulty <= 1.0) {
        return Err(Error::InvalidScenario(format!("difficulty must lie in (0, 1], got {difficulty}")));
    }
    let mut profiles = Vec::with_capacity(agents);
    let mut centres = Vec::with_capacity(agents);
    let mut thetas = Vec::with_capacity(agents);
    profiles.push(AgentProfile::new(
        "m00",
        Accuracy::Fixed(0.02),
        ConfidenceLaw::Uniform {
            low: 0.97,
            high: 0.99,
        },
    ));
    centres.push(0.98);
    thetas.push(0.02);
    let rest = agents - 1;
    for i in 0..rest {
        let theta = if rest == 1 {
            0.9
        } else {
            0.9 - 0.85 * i as f64 / (rest - 1) as f64
        };
        let centre = 0.55 + 0.4 * difficulty * (0.9 - theta) / 0.85;
        profiles.push(AgentProfile::new(
            format!("m{:02}", i + 1),
            Accuracy::Fixed(theta),
            ConfidenceLaw::Uniform {
                low: centre - 0.02,
                high: centre + 0.02,
            },
        ));
        centres.push(centre);
        thetas.push(theta);
    }
    let spec = ScenarioSpec::new(profiles, length, seed);
    let confidence_accuracy_r = pearson(&centres, &thetas)
        .ok_or_else(|| Error::InvalidScenario("cohort has no accuracy spread".into()))?;
    let tasks = group_tasks(&generate(&spec)?, ConfidenceChannel::Verbalized)?;
    let raw_resolution = raw_pairwise_resolution(&tasks)
        .ok_or_else(|| Error::InvalidScenario("stream has no disagreeing pairs".into()))?;
    if confidence_accuracy_r >= -0.2 || raw_resolution >= 0.5 {
        return Err(Error::InvalidScenario(format!(
            "cohort is not inverted (r = {confidence_accuracy_r:.3}, resolution = {raw_resolution:.3})"
        )));
    }
    Ok(InvertedCohort {
        spec,
        confidence_accuracy_r,
        raw_resolution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::generate;

    #[test]
    fn cohort_is_inverted() {
        let c = make_inverted_cohort(6, 1.0, 300, 1).unwrap();
        assert!(c.confidence_accuracy_r < -0.2);
        assert!(c.raw_resolution < 0.5);
        assert_eq!(c.spec.agents.len(), 6);
    }

    #[test]
    fn confidently_wrong_agent_loses_every_pair() {
        let c = make_inverted_cohort(4, 1.0, 200, 2).unwrap();
        let obs = generate(&c.spec).unwrap();
        let tasks = group_tasks(&obs, ConfidenceChannel::Verbalized).unwrap();
        for task in &tasks {
            let wrong = task.responses.iter().find(|r| r.agent == "m00").unwrap();
            if wrong.correct {
                continue;
            }
            for r in task.responses.iter().filter(|r| r.correct) {
                // confidence never exceeds 0.95 + 0.02 for the others
                assert!(r.confidence < wrong.confidence);
            }
        }
    }

    #[test]
    fn too_small_rejected() {
        assert!(make_inverted_cohort(1, 1.0, 10, 0).is_err());
        assert!(make_inverted_cohort(3, 0.0, 10, 0).is_err());
    }
}
