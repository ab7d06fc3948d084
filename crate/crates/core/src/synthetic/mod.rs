//! Seeded Bernoulli stream generators and Monte-Carlo checks of the
//! estimator's closed-form behaviour.

mod cohort;
mod generate;
mod scenario;
pub mod theory;
mod verify;

pub use cohort::{make_inverted_cohort, InvertedCohort};
pub use generate::{generate, phase_at};
pub use scenario::{
    Accuracy, AgentProfile, ConfidenceLaw, EventKind, Phase, PoolEvent, ScenarioSpec, Shift,
};
pub use verify::{
    verify_asymmetric, verify_closed_form, verify_convergence, verify_selection_monotonicity, verify_tracking,
    verify_ushape, AsymmetricReport, ClosedFormReport, ConvergenceReport, SelectionReport, SelectionRow,
    TrackingReport, UShapeReport, UShapeRow, UShapeSettings,
};
