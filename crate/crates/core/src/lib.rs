//! Online confidence calibration for pools of black-box agents.
//!
//! Each agent's stated confidence is routed to one of `K` equal-width bands.
//! Every (agent, band) cell tracks an exponentially weighted moving average of
//! observed accuracy and of stated confidence; their ratio is the band's
//! calibration factor. Sparse cells are shrunk toward a model-level (or
//! pool-level) prior until enough observations accumulate. Calibrated
//! confidences then drive confidence-weighted answer selection.
//!
//! Besides the calibrator itself the crate carries everything needed to
//! evaluate it without touching the filesystem:
//!
//! - [`selection`] and [`metrics`]: weighted voting, ECE, pairwise resolution.
//! - [`baselines`]: temperature, Platt and histogram-binning fits.
//! - [`synthetic`]: seeded stream generators and Monte-Carlo checks of the
//!   estimator's closed-form behaviour.
//! - [`harness`]: shuffle-based replay protocols over observation streams.
//!
//! The crate is `no_std` and needs only `alloc`. Work that can run in parallel
//! is expressed through the [`Executor`] trait so a host crate can plug in a
//! thread pool.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod calibrator;
mod error;
mod exec;
pub mod harness;
pub mod metrics;
pub mod observation;
pub mod rng;
pub mod selection;
pub mod stats;
pub mod synthetic;

pub use calibrator::{
    band_index, AgentCalibrator, BandState, CalibratorConfig, Pool, PriorSource,
};
pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use observation::{consistency_confidence, group_tasks, ConfidenceChannel, Observation};
pub use selection::{select, Response, SelectionResult, TaskResponses};
