use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::scenario::{EventKind, ScenarioSpec};
use crate::error::Result;
use crate::observation::Observation;
use crate::rng::{label_hash, substream};

/// Phase tag in force at step `t`, if any.
pub fn phase_at(spec: &ScenarioSpec, t: usize) -> Option<&str> {
    spec.phases
        .iter()
        .rfind(|p| p.from <= t)
        .map(|p| p.tag.as_str())
}

/// Materializes the observation stream of `spec`.
///
/// Each step `t` is task `t{t}`. Every agent owns a generator keyed by its
/// id and draws two uniforms per step whether or not it is active, so
/// editing one agent or the event schedule never changes another agent's
/// records. Correct answers share the class `ok`; wrong answers get a
/// per-agent class.
pub fn generate(spec: &ScenarioSpec) -> Result<Vec<Observation>> {
    spec.validate()?;
    let mut active: BTreeSet<&str> = spec.agents.iter().map(|a| a.id.as_str()).collect();
    for event in &spec.events {
        if let EventKind::AddAgent(id) = &event.kind {
            active.remove(id.as_str());
        }
    }
    let mut events: Vec<_> = spec.events.iter().collect();
    events.sort_by_key(|e| e.at);
    let mut next_event = 0;
    let mut rngs: Vec<_> = spec
        .agents
        .iter()
        .map(|a| substream(spec.seed, label_hash(&a.id)))
        .collect();
    let mut out = Vec::with_capacity(spec.length * spec.agents.len());
    for t in 0..spec.length {
        while next_event < events.len() && events[next_event].at <= t {
            match &events[next_event].kind {
                EventKind::AddAgent(id) => {
                    active.insert(id.as_str());
                }
                EventKind::RemoveAgent(id) => {
                    active.remove(id.as_str());
                }
                EventKind::SwapWorst => {}
            }
            next_event += 1;
        }
        let task = format!("t{t}");
        let phase = phase_at(spec, t).map(String::from);
        for (agent, rng) in spec.agents.iter().zip(&mut rngs) {
            let u_conf: f64 = rng.random();
            let u_outcome: f64 = rng.random();
            if !active.contains(agent.id.as_str()) {
                continue;
            }
            let (confidence, correct) = agent.draw(t, u_conf, u_outcome);
            let answer_class = if correct {
                String::from("ok")
            } else {
                format!("x-{}", agent.id)
            };
            out.push(Observation {
                agent: agent.id.clone(),
                task: task.clone(),
                confidence,
                correct,
                answer_class: Some(answer_class),
                phase: phase.clone(),
                consistency_samples: None,
            });
        }
    }
    Ok(out)
}
