//! Curve-shape features, signed simulated minus target.

use serde::{Deserialize, Serialize};

use super::align::{AlignMode, AlignedPair, ALIGN_POINTS};
use crate::sim::{SimulationTrace, StepKind};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cc_charge_time_mismatch_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_shift_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_fraction_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_delta_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_voltage_delta_v: Option<f64>,
}

impl FeatureSet {
    /// Present fields as `(name, value)` pairs in declaration order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        [
            ("cc_charge_time_mismatch_s", self.cc_charge_time_mismatch_s),
            ("plateau_shift_v", self.plateau_shift_v),
            ("cv_fraction_delta", self.cv_fraction_delta),
            ("capacity_delta_pct", self.capacity_delta_pct),
            ("end_voltage_delta_v", self.end_voltage_delta_v),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

/// Charge delivered while the current is positive [Ah], trapezoid rule.
pub fn discharge_throughput(t: &SimulationTrace) -> f64 {
    let mut q = 0.0;
    for i in 1..t.len() {
        let a = t.current[i - 1].max(0.0);
        let b = t.current[i].max(0.0);
        q += 0.5 * (a + b) * (t.time[i] - t.time[i - 1]);
    }
    q / 3600.0
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Steps that ran to their end in both traces.
fn complete_in_both(pair: &AlignedPair, sim: &SimulationTrace, step: usize) -> bool {
    let done = |t: &SimulationTrace, steps: &[usize]| {
        steps.contains(&step) && t.failure.as_ref().map_or(true, |f| f.step > step)
    };
    done(sim, &pair.sim_steps) && pair.target_steps.contains(&step)
}

/// Extracts features from an alignment of `sim` against `target`. `kinds`
/// lists the protocol's step kinds; the first CC charge, the first CV and the
/// first CC step of either direction are the reference segments.
pub fn extract_features(
    pair: &AlignedPair,
    sim: &SimulationTrace,
    target: &SimulationTrace,
    kinds: &[StepKind],
) -> FeatureSet {
    let first = |k: StepKind| kinds.iter().position(|&x| x == k);
    let duration = |d: &[f64], step: usize| d.get(step).copied();
    let usable = |step: usize| complete_in_both(pair, sim, step);
    let mut f = FeatureSet::default();

    let cc_charge = first(StepKind::CcCharge).filter(|&s| usable(s));
    if let Some(s) = cc_charge {
        if let (Some(a), Some(b)) = (duration(&pair.sim_durations, s), duration(&pair.target_durations, s)) {
            f.cc_charge_time_mismatch_s = Some(a - b);
        }
    }

    let cc = kinds
        .iter()
        .position(|&k| matches!(k, StepKind::CcCharge | StepKind::CcDischarge))
        .filter(|&s| usable(s));
    if let (Some(s), AlignMode::PerStep) = (cc, pair.mode) {
        if let Some(seg) = pair.segment_for_step(s) {
            let lo = ALIGN_POINTS / 4;
            let hi = 3 * ALIGN_POINTS / 4;
            let diffs = (lo..hi).map(|i| seg.sim.voltage[i] - seg.target.voltage[i]).collect();
            f.plateau_shift_v = median(diffs);
        }
    }

    let cv = first(StepKind::Cv).filter(|&s| usable(s));
    if let (Some(c), Some(v)) = (cc_charge, cv) {
        let frac = |d: &[f64]| {
            let (cc, cv) = (duration(d, c)?, duration(d, v)?);
            (cc + cv > 0.0).then(|| cv / (cc + cv))
        };
        if let (Some(a), Some(b)) = (frac(&pair.sim_durations), frac(&pair.target_durations)) {
            f.cv_fraction_delta = Some(a - b);
        }
    }

    if sim.succeeded() && !pair.step_mismatch() {
        let qs = discharge_throughput(sim);
        let qt = discharge_throughput(target);
        if qt > 0.0 {
            f.capacity_delta_pct = Some(100.0 * (qs - qt) / qt);
        }
        if let (Some(a), Some(b)) = (sim.voltage.last(), target.voltage.last()) {
            f.end_voltage_delta_v = Some(a - b);
        }
    }
    f
}
