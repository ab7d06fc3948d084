//! Band routing, EWMA state and shrinkage-blended calibration factors.
//!
//! A [`Pool`] owns one [`AgentCalibrator`] per agent. Each calibrator keeps
//! `K` [`BandState`] cells plus one model-level cell that sees every
//! observation of the agent. The calibrated confidence for a stated
//! confidence `c` in band `k` is `clamp(gamma_eff(k) * c, 0, 1)` where
//! `gamma_eff` blends the band's accuracy/confidence ratio with a prior
//! factor using weight `n / (n + k_s)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_confidence, Error, Result};

/// Which factor sparse bands are shrunk toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    /// The agent's own model-level factor.
    #[default]
    ModelLevel,
    /// The unweighted mean band factor of the other agents in the pool.
    PoolLevel,
}

/// Hyperparameters of one calibrator instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratorConfig {
    /// Learning rate applied after a correct outcome.
    pub alpha_up: f64,
    /// Learning rate applied after an incorrect outcome.
    pub alpha_down: f64,
    pub band_count: usize,
    /// Shrinkage constant `k_s`; zero disables blending.
    pub shrinkage: f64,
    /// Lower clamp for denominators and logits.
    pub epsilon: f64,
    pub prior_source: PriorSource,
}

impl Default for CalibratorConfig {
    fn default() -> Self {
        Self {
            alpha_up: 0.04,
            alpha_down: 0.04,
            band_count: 3,
            shrinkage: 100.0,
            epsilon: 1e-6,
            prior_source: PriorSource::ModelLevel,
        }
    }
}

impl CalibratorConfig {
    /// Default configuration with a single learning rate.
    pub fn symmetric(alpha: f64) -> Self {
        Self {
            alpha_up: alpha,
            alpha_down: alpha,
            ..Self::default()
        }
    }

    pub fn with_rates(mut self, alpha_up: f64, alpha_down: f64) -> Self {
        self.alpha_up = alpha_up;
        self.alpha_down = alpha_down;
        self
    }

    pub fn with_bands(mut self, band_count: usize) -> Self {
        self.band_count = band_count;
        self
    }

    pub fn with_shrinkage(mut self, shrinkage: f64) -> Self {
        self.shrinkage = shrinkage;
        self
    }

    pub fn with_prior(mut self, prior_source: PriorSource) -> Self {
        self.prior_source = prior_source;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let rate_ok = |a: f64| a > 0.0 && a < 1.0;
        if !rate_ok(self.alpha_up) {
            return Err(Error::InvalidConfig(format!(
                "alpha_up must lie in (0, 1), got {}",
                self.alpha_up
            )));
        }
        if !rate_ok(self.alpha_down) {
            return Err(Error::InvalidConfig(format!(
                "alpha_down must lie in (0, 1), got {}",
                self.alpha_down
            )));
        }
        if self.band_count == 0 {
            return Err(Error::InvalidConfig("band_count must be at least 1".to_string()));
        }
        if !(self.shrinkage >= 0.0 && self.shrinkage.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "shrinkage must be a finite non-negative number, got {}",
                self.shrinkage
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.01) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in (0, 0.01), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// The learning rate used for an observation with this outcome.
    pub fn alpha_for(&self, outcome: bool) -> f64 {
        if outcome {
            self.alpha_up
        } else {
            self.alpha_down
        }
    }
}

/// Zero-based band of `confidence` among `band_count` equal-width bands.
///
/// Bands are half-open `[j/K, (j+1)/K)` except the top one, which is closed
/// at 1.
pub fn band_index(confidence: f64, band_count: usize) -> Result<usize> {
    check_confidence(confidence)?;
    if band_count == 0 {
        return Err(Error::InvalidConfig("band_count must be at least 1".to_string()));
    }
    let raw = libm::floor(confidence * band_count as f64) as usize;
    Ok(raw.min(band_count - 1))
}

/// Midpoint of band `band` (zero-based).
pub fn band_midpoint(band: usize, band_count: usize) -> f64 {
    (band as f64 + 0.5) / band_count as f64
}

/// EWMA accuracy and confidence for one (agent, band) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandState {
    pub acc_hat: f64,
    pub conf_bar: f64,
    pub n_obs: u64,
}

impl BandState {
    /// A cell with both estimates at `value` and no observations.
    pub fn at(value: f64) -> Self {
        Self {
            acc_hat: value,
            conf_bar: value,
            n_obs: 0,
        }
    }

    /// One EWMA step. `confidence` must already be validated.
    pub fn update(&mut self, confidence: f64, outcome: bool, config: &CalibratorConfig) {
        debug_assert!((0.0..=1.0).contains(&confidence));
        let alpha = config.alpha_for(outcome);
        let target = if outcome { 1.0 } else { 0.0 };
        self.acc_hat = (1.0 - alpha) * self.acc_hat + alpha * target;
        self.conf_bar = (1.0 - alpha) * self.conf_bar + alpha * confidence;
        self.n_obs += 1;
    }

    /// Accuracy-to-confidence ratio with the denominator clamped at `epsilon`.
    pub fn factor(&self, epsilon: f64) -> f64 {
        self.acc_hat / self.conf_bar.max(epsilon)
    }

    fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.acc_hat) && (0.0..=1.0).contains(&self.conf_bar)
    }
}

/// Calibration state for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCalibrator {
    bands: Vec<BandState>,
    model_level: BandState,
}

impl AgentCalibrator {
    pub fn new(band_count: usize) -> Self {
        let bands = (0..band_count)
            .map(|k| BandState::at(band_midpoint(k, band_count)))
            .collect();
        Self {
            bands,
            model_level: BandState::at(0.5),
        }
    }

    pub fn bands(&self) -> &[BandState] {
        &self.bands
    }

    pub fn model_level(&self) -> &BandState {
        &self.model_level
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    /// Observations seen across all bands.
    pub fn observations(&self) -> u64 {
        self.model_level.n_obs
    }

    /// Feeds one outcome; returns the band that was updated.
    pub fn observe(
        &mut self,
        confidence: f64,
        outcome: bool,
        config: &CalibratorConfig,
    ) -> Result<usize> {
        let band = band_index(confidence, self.bands.len())?;
        self.bands[band].update(confidence, outcome, config);
        self.model_level.update(confidence, outcome, config);
        Ok(band)
    }

    /// Shrinkage-blended factor for `band`.
    ///
    /// With [`PriorSource::PoolLevel`] the caller supplies the pool prior;
    /// when it is `None` (no other agent has data for the band) the
    /// model-level factor stands in.
    pub fn effective_factor(
        &self,
        band: usize,
        pool_prior: Option<f64>,
        config: &CalibratorConfig,
    ) -> f64 {
        let state = &self.bands[band];
        let band_factor = state.factor(config.epsilon);
        if config.shrinkage == 0.0 {
            return band_factor;
        }
        let prior = match (config.prior_source, pool_prior) {
            (PriorSource::PoolLevel, Some(p)) => p,
            _ => self.model_level.factor(config.epsilon),
        };
        let n = state.n_obs as f64;
        let total = n + config.shrinkage;
        (n / total) * band_factor + (config.shrinkage / total) * prior
    }

    /// Calibrated confidence in [0, 1].
    pub fn calibrate(
        &self,
        confidence: f64,
        config: &CalibratorConfig,
        pool_prior: Option<f64>,
    ) -> Result<f64> {
        let band = band_index(confidence, self.bands.len())?;
        let factor = self.effective_factor(band, pool_prior, config);
        Ok((factor * confidence).clamp(0.0, 1.0))
    }

    fn validate(&self, band_count: usize) -> core::result::Result<(), String> {
        if self.bands.len() != band_count {
            return Err(format!(
                "expected {band_count} bands, found {}",
                self.bands.len()
            ));
        }
        if !self.bands.iter().all(BandState::is_valid) || !self.model_level.is_valid() {
            return Err("estimates must lie in [0, 1]".to_string());
        }
        let total: u64 = self.bands.iter().map(|b| b.n_obs).sum();
        if total != self.model_level.n_obs {
            return Err(format!(
                "model-level count {} differs from band total {total}",
                self.model_level.n_obs
            ));
        }
        Ok(())
    }
}

/// All calibrators of an agent pool, keyed by agent id.
///
/// Serializes as `{"config": {...}, "agents": {id: {"bands": [...],
/// "model_level": {...}}}}`; deserialization re-checks every invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoolRepr")]
pub struct Pool {
    config: CalibratorConfig,
    agents: BTreeMap<String, AgentCalibrator>,
}

#[derive(Deserialize)]
struct PoolRepr {
    config: CalibratorConfig,
    agents: BTreeMap<String, AgentCalibrator>,
}

impl TryFrom<PoolRepr> for Pool {
    type Error = Error;

    fn try_from(repr: PoolRepr) -> Result<Self> {
        repr.config.validate()?;
        for (id, cal) in &repr.agents {
            cal.validate(repr.config.band_count)
                .map_err(|e| Error::InvalidSnapshot(format!("agent {id}: {e}")))?;
        }
        Ok(Self {
            config: repr.config,
            agents: repr.agents,
        })
    }
}

impl Pool {
    pub fn new(config: CalibratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            agents: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &CalibratorConfig {
        &self.config
    }

    pub fn agent(&self, id: &str) -> Option<&AgentCalibrator> {
        self.agents.get(id)
    }

    pub fn agents(&self) -> impl Iterator<Item = (&str, &AgentCalibrator)> {
        self.agents.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Registers `id` with fresh state if it is not already present.
    pub fn add_agent(&mut self, id: &str) {
        if !self.agents.contains_key(id) {
            self.agents
                .insert(id.to_string(), AgentCalibrator::new(self.config.band_count));
        }
    }

    /// Restores previously detached state for `id`.
    pub fn insert_agent(&mut self, id: &str, calibrator: AgentCalibrator) -> Result<()> {
        calibrator
            .validate(self.config.band_count)
            .map_err(|e| Error::InvalidSnapshot(format!("agent {id}: {e}")))?;
        self.agents.insert(id.to_string(), calibrator);
        Ok(())
    }

    /// Detaches `id`, returning its state. Other agents are untouched.
    pub fn remove_agent(&mut self, id: &str) -> Option<AgentCalibrator> {
        self.agents.remove(id)
    }

    /// Feeds one outcome for `agent`, registering it on first sight.
    pub fn observe(&mut self, agent: &str, confidence: f64, outcome: bool) -> Result<()> {
        check_confidence(confidence)?;
        let band_count = self.config.band_count;
        let config = self.config;
        self.agents
            .entry(agent.to_string())
            .or_insert_with(|| AgentCalibrator::new(band_count))
            .observe(confidence, outcome, &config)?;
        Ok(())
    }

    /// Unweighted mean band factor of every agent other than `exclude` that
    /// has at least one observation in `band`.
    pub fn pool_prior(&self, exclude: &str, band: usize) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (id, cal) in &self.agents {
            if id == exclude {
                continue;
            }
            let state = &cal.bands[band];
            if state.n_obs > 0 {
                sum += state.factor(self.config.epsilon);
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    fn prior_for(&self, agent: &str, band: usize) -> Option<f64> {
        match self.config.prior_source {
            PriorSource::ModelLevel => None,
            PriorSource::PoolLevel => self.pool_prior(agent, band),
        }
    }

    pub fn effective_factor(&self, agent: &str, band: usize) -> Result<f64> {
        if band >= self.config.band_count {
            return Err(Error::InvalidConfig(format!(
                "band {band} out of range for {} bands",
                self.config.band_count
            )));
        }
        let prior = self.prior_for(agent, band);
        Ok(match self.agents.get(agent) {
            Some(cal) => cal.effective_factor(band, prior, &self.config),
            None => AgentCalibrator::new(self.config.band_count)
                .effective_factor(band, prior, &self.config),
        })
    }

    /// Calibrated confidence for `agent`. Unknown agents are treated as
    /// fresh (identity, or the pool prior under [`PriorSource::PoolLevel`]).
    pub fn calibrate(&self, agent: &str, confidence: f64) -> Result<f64> {
        let band = band_index(confidence, self.config.band_count)?;
        let factor = self.effective_factor(agent, band)?;
        Ok((factor * confidence).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn band_index_examples() {
        assert_eq!(band_index(0.0, 3).unwrap(), 0);
        assert_eq!(band_index(1.0, 3).unwrap(), 2);
        assert_eq!(band_index(1.0 / 3.0, 3).unwrap(), 1);
        assert_eq!(band_index(0.5, 1).unwrap(), 0);
        assert_eq!(band_index(0.999, 10).unwrap(), 9);
    }

    #[test]
    fn band_index_rejects_corrupt_confidence() {
        assert_eq!(band_index(1.3, 3), Err(Error::ConfidenceOutOfRange(1.3)));
        assert!(band_index(-0.1, 3).is_err());
        assert!(band_index(f64::NAN, 3).is_err());
        assert!(band_index(0.5, 0).is_err());
    }

    #[test]
    fn single_update_from_midpoint() {
        let config = CalibratorConfig::symmetric(0.04);
        let mut state = BandState::at(5.0 / 6.0);
        state.update(0.9, true, &config);
        assert_abs_diff_eq!(state.acc_hat, 0.84, epsilon = 1e-12);
        // 0.96 * 5/6 + 0.04 * 0.9
        assert_abs_diff_eq!(state.conf_bar, 0.836, epsilon = 1e-12);
        assert_eq!(state.n_obs, 1);
    }

    #[test]
    fn consecutive_successes_follow_closed_form() {
        let alpha = 0.04;
        let config = CalibratorConfig::symmetric(alpha);
        let start = 0.3;
        let mut state = BandState::at(start);
        for t in 1..=10 {
            state.update(0.5, true, &config);
            let decay = libm::pow(1.0 - alpha, t as f64);
            assert_abs_diff_eq!(state.acc_hat, decay * start + (1.0 - decay), epsilon = 1e-12);
        }
    }

    #[test]
    fn asymmetric_rates_pick_by_outcome() {
        let config = CalibratorConfig::default().with_rates(0.02, 0.06);
        let mut up = BandState::at(0.5);
        up.update(0.5, true, &config);
        assert_abs_diff_eq!(up.acc_hat, 0.98 * 0.5 + 0.02, epsilon = 1e-15);
        let mut down = BandState::at(0.5);
        down.update(0.5, false, &config);
        assert_abs_diff_eq!(down.acc_hat, 0.94 * 0.5, epsilon = 1e-15);
    }

    fn calibrator_with(band: BandState, model: BandState) -> AgentCalibrator {
        let mut cal = AgentCalibrator::new(3);
        cal.bands[2] = band;
        cal.model_level = model;
        cal
    }

    #[test]
    fn effective_factor_blends_by_count() {
        let config = CalibratorConfig::default();
        // band factor 0.6, model-level factor 0.8
        let band = |n| BandState {
            acc_hat: 0.48,
            conf_bar: 0.8,
            n_obs: n,
        };
        let model = BandState {
            acc_hat: 0.4,
            conf_bar: 0.5,
            n_obs: 0,
        };
        let f = |n| calibrator_with(band(n), model).effective_factor(2, None, &config);
        assert_abs_diff_eq!(f(0), 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(f(100), 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(f(300), 0.65, epsilon = 1e-12);
    }

    #[test]
    fn zero_shrinkage_is_pure_band_factor() {
        let config = CalibratorConfig::default().with_shrinkage(0.0);
        let cal = calibrator_with(
            BandState {
                acc_hat: 0.3,
                conf_bar: 0.6,
                n_obs: 0,
            },
            BandState::at(0.5),
        );
        assert_abs_diff_eq!(cal.effective_factor(2, None, &config), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn pool_prior_used_when_configured() {
        let config = CalibratorConfig::default().with_prior(PriorSource::PoolLevel);
        let cal = AgentCalibrator::new(3);
        assert_abs_diff_eq!(cal.effective_factor(1, Some(0.7), &config), 0.7, epsilon = 1e-15);
        // missing prior falls back to model level (1.0 when fresh)
        assert_abs_diff_eq!(cal.effective_factor(1, None, &config), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn fresh_calibrator_is_identity() {
        let config = CalibratorConfig::default();
        let cal = AgentCalibrator::new(3);
        for c in [0.0, 0.1, 0.42, 0.5, 2.0 / 3.0, 0.99, 1.0] {
            assert_abs_diff_eq!(cal.calibrate(c, &config, None).unwrap(), c, epsilon = 1e-15);
        }
    }

    #[test]
    fn calibrated_output_discounts_and_clamps() {
        let config = CalibratorConfig::default().with_shrinkage(0.0);
        let discount = calibrator_with(
            BandState {
                acc_hat: 0.67,
                conf_bar: 1.0,
                n_obs: 10,
            },
            BandState::at(0.5),
        );
        assert_abs_diff_eq!(discount.calibrate(0.9, &config, None).unwrap(), 0.603, epsilon = 1e-12);
        let boost = calibrator_with(
            BandState {
                acc_hat: 0.9,
                conf_bar: 0.6,
                n_obs: 10,
            },
            BandState::at(0.5),
        );
        assert_eq!(boost.calibrate(0.9, &config, None).unwrap(), 1.0);
    }

    #[test]
    fn near_zero_confidence_stays_finite() {
        let config = CalibratorConfig::default().with_shrinkage(0.0);
        let cal = calibrator_with(
            BandState {
                acc_hat: 0.2,
                conf_bar: 0.0,
                n_obs: 5,
            },
            BandState::at(0.5),
        );
        let f = cal.effective_factor(2, None, &config);
        assert!(f.is_finite());
        assert_abs_diff_eq!(f, 0.2 / 1e-6, epsilon = 1e-6);
    }

    #[test]
    fn observe_touches_only_one_band_and_one_agent() {
        let mut pool = Pool::new(CalibratorConfig::default()).unwrap();
        pool.observe("b", 0.5, true).unwrap();
        let before_b = pool.agent("b").unwrap().clone();
        pool.observe("a", 0.9, false).unwrap();
        let a = pool.agent("a").unwrap();
        assert_eq!(a.bands()[0], BandState::at(1.0 / 6.0));
        assert_eq!(a.bands()[1], BandState::at(0.5));
        assert_eq!(a.bands()[2].n_obs, 1);
        assert_eq!(a.model_level().n_obs, 1);
        assert_eq!(pool.agent("b").unwrap(), &before_b);
    }

    #[test]
    fn config_validation() {
        assert!(CalibratorConfig::default().validate().is_ok());
        assert!(CalibratorConfig::symmetric(0.0).validate().is_err());
        assert!(CalibratorConfig::symmetric(1.0).validate().is_err());
        assert!(CalibratorConfig::default().with_bands(0).validate().is_err());
        assert!(CalibratorConfig::default().with_shrinkage(-1.0).validate().is_err());
        let c = CalibratorConfig {
            epsilon: 0.5,
            ..CalibratorConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn pool_prior_is_mean_of_other_agents() {
        let config = CalibratorConfig::default().with_prior(PriorSource::PoolLevel);
        let mut pool = Pool::new(config).unwrap();
        pool.observe("a", 0.9, false).unwrap();
        pool.observe("b", 0.9, true).unwrap();
        let fa = pool.agent("a").unwrap().bands()[2].factor(1e-6);
        let fb = pool.agent("b").unwrap().bands()[2].factor(1e-6);
        assert_abs_diff_eq!(pool.pool_prior("new", 2).unwrap(), (fa + fb) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pool.pool_prior("a", 2).unwrap(), fb, epsilon = 1e-15);
        assert!(pool.pool_prior("new", 0).is_none());
        // a fresh newcomer is pulled fully to the pool prior
        let c = pool.calibrate("new", 0.8).unwrap();
        assert_abs_diff_eq!(c, 0.8 * (fa + fb) / 2.0, epsilon = 1e-12);
    }
}
