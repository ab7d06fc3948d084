use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calibrator::band_index;
use crate::error::{Error, Result};

/// True probability of a correct outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accuracy {
    Fixed(f64),
    /// One value per equal-width confidence band.
    PerBand(Vec<f64>),
    /// `scale * c + offset`, clamped to [0, 1].
    FollowsConfidence { scale: f64, offset: f64 },
}

impl Accuracy {
    /// Accuracy for a stated confidence, before drift.
    pub fn at(&self, confidence: f64) -> f64 {
        match self {
            Accuracy::Fixed(theta) => *theta,
            Accuracy::PerBand(values) => {
                let band = band_index(confidence.clamp(0.0, 1.0), values.len()).unwrap_or(0);
                values[band]
            }
            Accuracy::FollowsConfidence { scale, offset } => {
                (scale * confidence + offset).clamp(0.0, 1.0)
            }
        }
    }

    fn validate(&self, agent: &str) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        let bad = |what: String| Err(Error::InvalidScenario(format!("agent {agent}: {what}")));
        match self {
            Accuracy::Fixed(theta) if !in_unit(*theta) => {
                bad(format!("accuracy {theta} outside [0, 1]"))
            }
            Accuracy::PerBand(values) if values.is_empty() => bad("empty per-band accuracy".into()),
            Accuracy::PerBand(values) => match values.iter().find(|v| !in_unit(**v)) {
                Some(v) => bad(format!("band accuracy {v} outside [0, 1]")),
                None => Ok(()),
            },
            Accuracy::FollowsConfidence { scale, offset }
                if !(scale.is_finite() && offset.is_finite()) =>
            {
                bad("non-finite accuracy law".into())
            }
            _ => Ok(()),
        }
    }
}

/// How stated confidence is drawn for each task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceLaw {
    Constant(f64),
    Uniform { low: f64, high: f64 },
    /// `theta + bias + jitter * U(-1, 1)`, clamped to [0, 1]. Requires a
    /// fixed accuracy.
    Biased { bias: f64, jitter: f64 },
}

impl ConfidenceLaw {
    /// Confidence from one uniform draw `u` in [0, 1).
    pub(crate) fn draw(&self, u: f64, theta: f64) -> f64 {
        match self {
            ConfidenceLaw::Constant(c) => *c,
            ConfidenceLaw::Uniform { low, high } => low + (high - low) * u,
            ConfidenceLaw::Biased { bias, jitter } => {
                (theta + bias + jitter * (2.0 * u - 1.0)).clamp(0.0, 1.0)
            }
        }
    }

    fn validate(&self, agent: &str) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = match self {
            ConfidenceLaw::Constant(c) => in_unit(*c),
            ConfidenceLaw::Uniform { low, high } => in_unit(*low) && in_unit(*high) && low <= high,
            ConfidenceLaw::Biased { bias, jitter } => {
                bias.is_finite() && jitter.is_finite() && *jitter >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScenario(format!("agent {agent}: invalid confidence law {self:?}")))
        }
    }
}

/// Instantaneous change of an agent's accuracy law at step `at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub at: usize,
    pub accuracy: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: String,
    pub accuracy: Accuracy,
    pub confidence: ConfidenceLaw,
    /// Per-step change of accuracy; drifting accuracy is clamped to
    /// [0.02, 0.98].
    #[serde(default)]
    pub drift: f64,
    #[serde(default)]
    pub shifts: Vec<Shift>,
}

impl AgentProfile {
    pub fn new(id: impl Into<String>, accuracy: Accuracy, confidence: ConfidenceLaw) -> Self {
        Self {
            id: id.into(),
            accuracy,
            confidence,
            drift: 0.0,
            shifts: Vec::new(),
        }
    }

    /// Accuracy law in force at step `t` and the step it took effect.
    fn law_at(&self, t: usize) -> (&Accuracy, usize) {
        self.shifts
            .iter()
            .filter(|s| s.at <= t)
            .max_by_key(|s| s.at)
            .map_or((&self.accuracy, 0), |s| (&s.accuracy, s.at))
    }

    /// True accuracy at step `t` for stated confidence `c`.
    pub fn theta_at(&self, t: usize, confidence: f64) -> f64 {
        let (law, since) = self.law_at(t);
        let base = law.at(confidence);
        if self.drift == 0.0 {
            base.clamp(0.0, 1.0)
        } else {
            (base + self.drift * (t - since) as f64).clamp(0.02, 0.98)
        }
    }

    /// Draws (confidence, outcome) at step `t` from two uniforms.
    pub(crate) fn draw(&self, t: usize, u_conf: f64, u_outcome: f64) -> (f64, bool) {
        // Biased laws only pair with fixed accuracy, so theta is
        // confidence-independent there
        let theta_hint = self.theta_at(t, 0.5);
        let confidence = self.confidence.draw(u_conf, theta_hint);
        let theta = self.theta_at(t, confidence);
        (confidence, u_outcome < theta)
    }

    fn validate(&self, length: usize) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidScenario("agent id must not be empty".into()));
        }
        self.accuracy.validate(&self.id)?;
        self.confidence.validate(&self.id)?;
        if !self.drift.is_finite() {
            return Err(Error::InvalidScenario(format!("agent {}: drift must be finite", self.id)));
        }
        for shift in &self.shifts {
            if shift.at >= length {
                return Err(Error::InvalidScenario(format!(
                    "agent {}: shift at {} beyond stream length {length}",
                    self.id, shift.at
                )));
            }
            shift.accuracy.validate(&self.id)?;
        }
        if matches!(self.confidence, ConfidenceLaw::Biased { .. }) {
            let fixed = |a: &Accuracy| matches!(a, Accuracy::Fixed(_));
            if !fixed(&self.accuracy) || !self.shifts.iter().all(|s| fixed(&s.accuracy)) {
                return Err(Error::InvalidScenario(format!(
                    "agent {}: a biased confidence law needs fixed accuracy",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    AddAgent(String),
    RemoveAgent(String),
    /// Interpreted by the dynamic-pool harness; ignored by [`generate`].
    ///
    /// [`generate`]: super::generate
    SwapWorst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEvent {
    pub at: usize,
    pub kind: EventKind,
}

/// Tags steps `from..` (until the next phase) with `tag`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub from: usize,
    pub tag: String,
}

fn default_shuffles() -> usize {
    100
}

fn default_replications() -> usize {
    10_000
}

/// A complete, seeded synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub agents: Vec<AgentProfile>,
    pub length: usize,
    pub seed: u64,
    #[serde(default)]
    pub events: Vec<PoolEvent>,
    #[serde(default)]
    pub phases: Vec<Phase>,
    #[serde(default = "default_shuffles")]
    pub shuffle_count: usize,
    #[serde(default = "default_replications")]
    pub replication_count: usize,
}

impl ScenarioSpec {
    pub fn new(agents: Vec<AgentProfile>, length: usize, seed: u64) -> Self {
        Self {
            agents,
            length,
            seed,
            events: Vec::new(),
            phases: Vec::new(),
            shuffle_count: default_shuffles(),
            replication_count: default_replications(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::InvalidScenario("no agents".into()));
        }
        if self.length == 0 {
            return Err(Error::InvalidScenario("length must be positive".into()));
        }
        if self.shuffle_count == 0 || self.replication_count == 0 {
            return Err(Error::InvalidScenario(
                "shuffle_count and replication_count must be positive".into(),
            ));
        }
        let mut ids = BTreeSet::new();
        for agent in &self.agents {
            if !ids.insert(agent.id.as_str()) {
                return Err(Error::InvalidScenario(format!("duplicate agent id {}", agent.id)));
            }
            agent.validate(self.length)?;
        }
        for event in &self.events {
            if event.at > self.length {
                return Err(Error::InvalidScenario(format!(
                    "event at {} beyond stream length {}",
                    event.at, self.length
                )));
            }
            if let EventKind::AddAgent(id) | EventKind::RemoveAgent(id) = &event.kind {
                if !ids.contains(id.as_str()) {
                    return Err(Error::InvalidScenario(format!("event names unknown agent {id}")));
                }
            }
        }
        if self.phases.windows(2).any(|w| w[0].from >= w[1].from) {
            return Err(Error::InvalidScenario("phase starts must increase".into()));
        }
        if self.phases.iter().any(|p| p.from >= self.length) {
            return Err(Error::InvalidScenario("phase starts beyond stream length".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn drift_is_clamped_and_restarts_at_shift() {
        let mut p = AgentProfile::new("a", Accuracy::Fixed(0.5), ConfidenceLaw::Constant(0.5));
        p.drift = 0.01;
        assert!((p.theta_at(10, 0.5) - 0.6).abs() < 1e-12);
        assert_eq!(p.theta_at(1000, 0.5), 0.98);
        p.shifts.push(Shift {
            at: 20,
            accuracy: Accuracy::Fixed(0.3),
        });
        assert!((p.theta_at(25, 0.5) - 0.35).abs() < 1e-12);
    }

    #[test]
    fn per_band_and_follows_confidence() {
        let a = Accuracy::PerBand(vec![0.1, 0.5, 0.9]);
        assert_eq!(a.at(0.2), 0.1);
        assert_eq!(a.at(1.0), 0.9);
        let f = Accuracy::FollowsConfidence {
            scale: 1.0,
            offset: -0.4,
        };
        assert!((f.at(0.9) - 0.5).abs() < 1e-12);
        assert_eq!(f.at(0.2), 0.0);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let ok = AgentProfile::new("a", Accuracy::Fixed(0.5), ConfidenceLaw::Constant(0.5));
        assert!(ScenarioSpec::new(vec![ok.clone()], 10, 0).validate().is_ok());
        assert!(ScenarioSpec::new(vec![], 10, 0).validate().is_err());
        assert!(ScenarioSpec::new(vec![ok.clone(), ok.clone()], 10, 0).validate().is_err());
        let mut bad = ok.clone();
        bad.accuracy = Accuracy::Fixed(1.5);
        assert!(ScenarioSpec::new(vec![bad], 10, 0).validate().is_err());
        let mut biased = ok.clone();
        biased.accuracy = Accuracy::FollowsConfidence {
            scale: 1.0,
            offset: 0.0,
        };
        biased.confidence = ConfidenceLaw::Biased {
            bias: 0.1,
            jitter: 0.0,
        };
        assert!(ScenarioSpec::new(vec![biased], 10, 0).validate().is_err());
        let mut late = ScenarioSpec::new(vec![ok], 10, 0);
        late.events.push(PoolEvent {
            at: 11,
            kind: EventKind::SwapWorst,
        });
        assert!(late.validate().is_err());
    }
}
