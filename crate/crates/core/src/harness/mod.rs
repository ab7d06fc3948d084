//! Replay protocols over task streams: two-phase shift, cross-task transfer,
//! dynamic pools and ablation grids. Every protocol repeats over seeded
//! shuffles and reports means with bootstrap intervals.

mod ablation;
mod bootstrap;
mod dynamic_pool;
mod report;
mod shift;
mod transfer;

use serde::{Deserialize, Serialize};

use crate::calibrator::CalibratorConfig;
use crate::error::{Error, Result};

pub use ablation::{run_ablation, AblationGrid, AblationReport, ShiftCondition};
pub use bootstrap::{bootstrap_mean_ci, paired_bootstrap, PairedInterval, BOOTSTRAP_STREAM};
pub use dynamic_pool::{
    plain_window_series, run_dynamic_pool, ColdStartSummary, DropoutSummary, DynamicPoolReport,
    DynamicSettings, RollingSummary, Scenario, COLD_START_CHECKPOINTS,
};
pub use report::{ExperimentReport, MetricSummary, PairedDelta};
pub use shift::{
    learn, replay_online, run_selection, run_shift, shift_shuffle, ShiftShuffle, SHIFT_METHODS,
};
pub use transfer::{run_transfer, transfer_shuffle, TransferShuffle};

/// Settings shared by every protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub calibrator: CalibratorConfig,
    pub ece_bins: usize,
    /// Bootstrap resamples for confidence intervals.
    pub resamples: usize,
    pub shuffles: usize,
    pub seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            calibrator: CalibratorConfig::default(),
            ece_bins: 10,
            resamples: 10_000,
            shuffles: 100,
            seed: 0,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        self.calibrator.validate()?;
        if self.ece_bins == 0 {
            return Err(Error::InvalidConfig("ece_bins must be at least 1".into()));
        }
        if self.resamples == 0 {
            return Err(Error::InvalidConfig("resamples must be at least 1".into()));
        }
        if self.shuffles == 0 {
            return Err(Error::InvalidConfig("shuffles must be at least 1".into()));
        }
        Ok(())
    }
}
