//! Turning a simulated/target trace pair into the feedback package a proposer reads.

pub mod align;
pub mod cycles;
pub mod features;
pub mod render;
pub mod residuals;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{align_traces, AlignMode, AlignedPair, ALIGN_POINTS};
pub use cycles::select_cycle_indices;
pub use features::{extract_features, FeatureSet};
pub use render::{overlay_svg, render_overlay};
pub use residuals::{compute_residuals, ChannelWeights, LossConfig, LossError, ResidualSet, FAILED_TOTAL_MAPE};

use crate::metrics;
use crate::sim::{CycleSeries, Protocol, SimulationTrace};

pub const SUCCESS_EVENT: &str = "simulation_success";
pub const STEP_MISMATCH_EVENT: &str = "step_mismatch";
/// Cycles kept for per-cycle feedback in degradation runs.
pub const DEFAULT_SELECTED_CYCLES: usize = 5;

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("target trace is empty")]
    EmptyTarget,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPackage {
    pub residuals: ResidualSet,
    pub features: FeatureSet,
    pub visual: Option<String>,
    pub events: Vec<String>,
    pub round: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<BTreeMap<usize, FeedbackPackage>>,
}

impl FeedbackPackage {
    pub fn succeeded(&self) -> bool {
        self.events.iter().any(|e| e == SUCCESS_EVENT)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("feedback serializes")
    }
}

fn write_visual(sim: &SimulationTrace, target: &SimulationTrace, path: Option<&Path>) -> Result<Option<String>, FeedbackError> {
    let Some(path) = path else { return Ok(None) };
    render_overlay(sim, target, path)
        .map_err(|source| FeedbackError::Io { path: path.display().to_string(), source })?;
    Ok(Some(path.display().to_string()))
}

/// Aligns, scores, extracts features and (when `visual` is given) renders the
/// overlay. A failed simulation is scored over the time it did cover.
pub fn build_feedback(
    sim: &SimulationTrace,
    target: &SimulationTrace,
    protocol: &Protocol,
    cfg: &LossConfig,
    round: usize,
    visual: Option<&Path>,
) -> Result<FeedbackPackage, FeedbackError> {
    if target.is_empty() {
        return Err(FeedbackError::EmptyTarget);
    }
    let kinds = protocol.kinds();
    let mut events = vec![if sim.succeeded() { SUCCESS_EVENT.to_string() } else { sim.event_label() }];
    let (residuals, features) = match align_traces(sim, target, &kinds) {
        Some(pair) => {
            if pair.step_mismatch() {
                events.push(STEP_MISMATCH_EVENT.to_string());
            }
            (compute_residuals(&pair, cfg)?, extract_features(&pair, sim, target, &kinds))
        }
        None => (ResidualSet::failed(), FeatureSet::default()),
    };
    let visual = write_visual(sim, target, visual)?;
    Ok(FeedbackPackage { residuals, features, visual, events, round, protocol: Some(protocol.name.clone()), cycles: None })
}

/// Target data for a long cycling run: the full capacity curve plus traces of
/// the cycles picked from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationTarget {
    pub capacities: Vec<f64>,
    /// Keyed by 1-based cycle index.
    pub cycle_traces: BTreeMap<usize, SimulationTrace>,
}

impl DegradationTarget {
    pub fn from_series(series: &CycleSeries, k: usize) -> Self {
        let capacities = series.capacities();
        let cycle_traces = select_cycle_indices(&capacities, k)
            .into_iter()
            .map(|c| (c, series.cycles[c - 1].trace.clone()))
            .collect();
        Self { capacities, cycle_traces }
    }
}

fn cycle_visual_path(base: &Path, cycle: usize) -> std::path::PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "overlay".into());
    base.with_file_name(format!("{stem}_cycle{cycle}.svg"))
}

/// Feedback for a cycling run. The objective is the MAPE between capacity
/// curves over the cycles both cover; each selected cycle gets a sub-package.
pub fn build_degradation_feedback(
    sim: &CycleSeries,
    target: &DegradationTarget,
    protocol: &Protocol,
    cfg: &LossConfig,
    round: usize,
    visual: Option<&Path>,
) -> Result<FeedbackPackage, FeedbackError> {
    if target.capacities.is_empty() {
        return Err(FeedbackError::EmptyTarget);
    }
    let sim_caps = sim.capacities();
    let m = sim_caps.len().min(target.capacities.len());
    let curve = if m > 0 {
        metrics::mape(&sim_caps[..m], &target.capacities[..m]).map_err(LossError::from)?
    } else {
        None
    };
    let mut events = Vec::new();
    if sim.truncated() || sim_caps.len() < target.capacities.len() {
        let label = sim.cycles.last().map_or_else(|| "no_cycles".to_string(), |c| c.trace.event_label());
        events.push(format!("{label}@cycle{}", sim_caps.len()));
    } else {
        events.push(SUCCESS_EVENT.to_string());
    }
    let mut subs = BTreeMap::new();
    for (&c, t) in &target.cycle_traces {
        if let Some(rec) = sim.cycles.get(c - 1) {
            let path = visual.map(|v| cycle_visual_path(v, c));
            subs.insert(c, build_feedback(&rec.trace, t, protocol, cfg, round, path.as_deref())?);
        }
    }
    let residuals = ResidualSet {
        capacity_mape: curve,
        voltage_rmse: None,
        voltage_mape: None,
        current_mape: None,
        total_mape: curve.unwrap_or(FAILED_TOTAL_MAPE),
    };
    Ok(FeedbackPackage {
        residuals,
        features: FeatureSet::default(),
        visual: None,
        events,
        round,
        protocol: Some(protocol.name.clone()),
        cycles: Some(subs),
    })
}
