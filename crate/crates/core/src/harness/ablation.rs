use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::report::MetricSummary;
use super::shift::{margin_phase2_ece, shift_order};
use super::HarnessConfig;
use crate::calibrator::CalibratorConfig;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::selection::TaskResponses;

/// One hyperparameter axis to sweep; every other setting comes from the
/// harness configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationGrid {
    Alphas(Vec<f64>),
    BandCounts(Vec<usize>),
    /// `(alpha_up, alpha_down)` pairs.
    AsymmetricPairs(Vec<(f64, f64)>),
    Shrinkages(Vec<f64>),
}

impl AblationGrid {
    fn cells(&self, base: CalibratorConfig) -> Vec<(String, CalibratorConfig)> {
        match self {
            AblationGrid::Alphas(v) => v
                .iter()
                .map(|&a| (format!("alpha={a}"), base.with_rates(a, a)))
                .collect(),
            AblationGrid::BandCounts(v) => v
                .iter()
                .map(|&k| (format!("bands={k}"), base.with_bands(k)))
                .collect(),
            AblationGrid::AsymmetricPairs(v) => v
                .iter()
                .map(|&(u, d)| (format!("alpha_up={u},alpha_down={d}"), base.with_rates(u, d)))
                .collect(),
            AblationGrid::Shrinkages(v) => v
                .iter()
                .map(|&k| (format!("shrinkage={k}"), base.with_shrinkage(k)))
                .collect(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            AblationGrid::Alphas(_) => "alphas",
            AblationGrid::BandCounts(_) => "band_counts",
            AblationGrid::AsymmetricPairs(_) => "asymmetric_pairs",
            AblationGrid::Shrinkages(_) => "shrinkages",
        }
    }
}

/// A named two-phase stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCondition {
    pub name: String,
    pub phase1: Vec<TaskResponses>,
    pub phase2: Vec<TaskResponses>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub grid: String,
    pub seed: u64,
    pub shuffles: usize,
    pub cells: Vec<String>,
    pub conditions: Vec<String>,
    /// Phase-2 ECE of the online calibrator, indexed `[cell][condition]`.
    pub ece: Vec<Vec<MetricSummary>>,
}

impl AblationReport {
    /// Index of the cell with the lowest mean ECE under `condition`.
    pub fn best_cell(&self, condition: usize) -> usize {
        (0..self.cells.len()).fold(0, |best, i| {
            if self.ece[i][condition].mean < self.ece[best][condition].mean {
                i
            } else {
                best
            }
        })
    }
}

/// Runs the shift protocol's online arm for every (cell, condition) pair.
/// Shuffle orderings match [`run_shift`], so a one-cell grid reproduces its
/// `margin` summary.
///
/// [`run_shift`]: super::run_shift
pub fn run_ablation<E: Executor>(
    grid: &AblationGrid,
    conditions: &[ShiftCondition],
    config: &HarnessConfig,
    exec: &E,
) -> Result<AblationReport> {
    config.validate()?;
    let cells = grid.cells(config.calibrator);
    if cells.is_empty() {
        return Err(Error::InvalidConfig("ablation grid is empty".into()));
    }
    if conditions.is_empty() {
        return Err(Error::InvalidConfig("no shift conditions".into()));
    }
    for (label, cfg) in &cells {
        cfg.validate()
            .map_err(|e| Error::InvalidConfig(format!("cell {label}: {e}")))?;
    }
    for c in conditions {
        if c.phase1.is_empty() || c.phase2.is_empty() {
            return Err(Error::InvalidScenario(format!("condition {} has an empty phase", c.name)));
        }
    }
    let shuffles = config.shuffles;
    let per_cell_condition = shuffles * conditions.len();
    let values = exec.map(cells.len() * per_cell_condition, |unit| {
        let cell = unit / per_cell_condition;
        let cond = &conditions[(unit % per_cell_condition) / shuffles];
        let shuffle = unit % shuffles;
        let order = shift_order(cond.phase1.len(), cond.phase2.len(), config.seed, shuffle);
        margin_phase2_ece(&cond.phase1, &cond.phase2, cells[cell].1, config.ece_bins, &order)
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    let mut ece = Vec::with_capacity(cells.len());
    for cell in 0..cells.len() {
        let mut row = Vec::with_capacity(conditions.len());
        for cond in 0..conditions.len() {
            let start = cell * per_cell_condition + cond * shuffles;
            row.push(MetricSummary::from_values(
                &values[start..start + shuffles],
                config.resamples,
                config.seed,
                "margin",
            )?);
        }
        ece.push(row);
    }
    Ok(AblationReport {
        grid: String::from(grid.kind()),
        seed: config.seed,
        shuffles,
        cells: cells.into_iter().map(|(l, _)| l).collect(),
        conditions: conditions.iter().map(|c| c.name.clone()).collect(),
        ece,
    })
}
