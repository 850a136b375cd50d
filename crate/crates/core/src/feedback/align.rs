//! Resampling a simulated and a target trace onto a common axis.

use serde::{Deserialize, Serialize};

use crate::sim::{SimulationTrace, StepKind};

/// Points per aligned segment.
pub const ALIGN_POINTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// Each protocol step resampled on its own normalized time.
    PerStep,
    /// Step structure differs; both traces resampled on whole-trace normalized time.
    WholeTrace,
    /// The simulation stopped early; both traces resampled on the shared
    /// absolute-time window.
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Channels {
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
    /// Charge moved since the start of the segment, ∫|I|dt [Ah].
    pub throughput: Vec<f64>,
}

impl Channels {
    fn extend(&mut self, other: Channels) {
        self.voltage.extend(other.voltage);
        self.current.extend(other.current);
        self.throughput.extend(other.throughput);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSegment {
    pub step: Option<usize>,
    pub kind: Option<StepKind>,
    pub sim: Channels,
    pub target: Channels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub mode: AlignMode,
    pub segments: Vec<AlignedSegment>,
    /// Step durations recomputed from the samples, indexed by step.
    pub sim_durations: Vec<f64>,
    pub target_durations: Vec<f64>,
    pub sim_steps: Vec<usize>,
    pub target_steps: Vec<usize>,
}

impl AlignedPair {
    /// All segments concatenated.
    pub fn sim_all(&self) -> Channels {
        let mut c = Channels::default();
        for s in &self.segments {
            c.extend(s.sim.clone());
        }
        c
    }

    pub fn target_all(&self) -> Channels {
        let mut c = Channels::default();
        for s in &self.segments {
            c.extend(s.target.clone());
        }
        c
    }

    pub fn segment_for_step(&self, step: usize) -> Option<&AlignedSegment> {
        self.segments.iter().find(|s| s.step == Some(step))
    }

    pub fn step_mismatch(&self) -> bool {
        self.mode == AlignMode::WholeTrace
    }
}

/// Durations per step from sample timestamps: each interval belongs to the
/// step of its later sample.
pub fn sample_durations(t: &SimulationTrace) -> Vec<f64> {
    let n_steps = t.step_index.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![0.0; n_steps];
    for i in 1..t.len() {
        out[t.step_index[i]] += t.time[i] - t.time[i - 1];
    }
    out
}

/// Cumulative ∫|I|dt [Ah] by the trapezoid rule.
pub fn cumulative_throughput(t: &SimulationTrace) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    let mut acc = 0.0;
    for i in 0..t.len() {
        if i > 0 {
            acc += 0.5 * (t.current[i].abs() + t.current[i - 1].abs()) * (t.time[i] - t.time[i - 1]) / 3600.0;
        }
        out.push(acc);
    }
    out
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.len() == 1 || x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let k = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let w = (x - x0) / (x1 - x0);
    ys[k - 1] + w * (ys[k] - ys[k - 1])
}

/// Resamples samples `range` of `t` at `n` evenly spaced times in `[t0, t1]`,
/// with throughput measured from `baseline`.
fn resample(
    t: &SimulationTrace,
    throughput: &[f64],
    range: std::ops::Range<usize>,
    baseline: f64,
    t0: f64,
    t1: f64,
    n: usize,
) -> Channels {
    let xs = &t.time[range.clone()];
    let mut c = Channels {
        voltage: Vec::with_capacity(n),
        current: Vec::with_capacity(n),
        throughput: Vec::with_capacity(n),
    };
    for k in 0..n {
        let u = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
        let x = t0 + u * (t1 - t0);
        c.voltage.push(interp(xs, &t.voltage[range.clone()], x));
        c.current.push(interp(xs, &t.current[range.clone()], x));
        c.throughput.push(interp(xs, &throughput[range.clone()], x) - baseline);
    }
    c
}

fn step_segment(t: &SimulationTrace, throughput: &[f64], step: usize, n: usize) -> Channels {
    let range = t.step_range(step).expect("step present");
    let baseline = if range.start > 0 { throughput[range.start - 1] } else { 0.0 };
    let (t0, t1) = (t.time[range.start], t.time[range.end - 1]);
    resample(t, throughput, range, baseline, t0, t1, n)
}

/// Aligns `sim` against `target`. `kinds` labels steps by protocol position.
/// Returns `None` when either trace is empty.
pub fn align_traces(sim: &SimulationTrace, target: &SimulationTrace, kinds: &[StepKind]) -> Option<AlignedPair> {
    if sim.is_empty() || target.is_empty() {
        return None;
    }
    let sim_steps = sim.steps_present();
    let target_steps = target.steps_present();
    let sim_tp = cumulative_throughput(sim);
    let target_tp = cumulative_throughput(target);
    let base = |mode, segments| AlignedPair {
        mode,
        segments,
        sim_durations: sample_durations(sim),
        target_durations: sample_durations(target),
        sim_steps: sim_steps.clone(),
        target_steps: target_steps.clone(),
    };

    if !sim.succeeded() {
        let end = sim.time[sim.len() - 1].min(target.time[target.len() - 1]);
        let start = sim.time[0].max(target.time[0]);
        let seg = AlignedSegment {
            step: None,
            kind: None,
            sim: resample(sim, &sim_tp, 0..sim.len(), 0.0, start, end.max(start), ALIGN_POINTS),
            target: resample(target, &target_tp, 0..target.len(), 0.0, start, end.max(start), ALIGN_POINTS),
        };
        return Some(base(AlignMode::Overlap, vec![seg]));
    }

    if sim_steps != target_steps {
        let whole = |t: &SimulationTrace, tp: &[f64]| {
            resample(t, tp, 0..t.len(), 0.0, t.time[0], t.time[t.len() - 1], ALIGN_POINTS)
        };
        let seg = AlignedSegment { step: None, kind: None, sim: whole(sim, &sim_tp), target: whole(target, &target_tp) };
        return Some(base(AlignMode::WholeTrace, vec![seg]));
    }

    let segments = sim_steps
        .iter()
        .map(|&step| AlignedSegment {
            step: Some(step),
            kind: kinds.get(step).copied(),
            sim: step_segment(sim, &sim_tp, step, ALIGN_POINTS),
            target: step_segment(target, &target_tp, step, ALIGN_POINTS),
        })
        .collect();
    Some(base(AlignMode::PerStep, segments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trace::integrate_capacity;
    use crate::sim::TerminationEvent;

    pub(crate) fn synthetic(n_per_step: &[usize], durations: &[f64]) -> SimulationTrace {
        let mut time = vec![0.0];
        let mut step_index = vec![0];
        let mut t0 = 0.0;
        for (k, (&n, &d)) in n_per_step.iter().zip(durations).enumerate() {
            for i in 1..=n {
                time.push(t0 + d * i as f64 / n as f64);
                step_index.push(k);
            }
            t0 += d;
        }
        let current: Vec<f64> = step_index.iter().map(|&k| if k % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let voltage: Vec<f64> = time.iter().map(|t| 3.0 + 1e-4 * t).collect();
        let mut tr = SimulationTrace {
            capacity: integrate_capacity(&time, &current),
            time,
            voltage,
            current,
            step_index,
            step_durations: durations.to_vec(),
            event: TerminationEvent::Completed,
            failure: None,
            discharge_capacity_ah: 0.0,
        };
        tr.rebuild_summaries();
        tr
    }

    #[test]
    fn self_alignment_is_identical() {
        let t = synthetic(&[100, 50], &[3600.0, 1800.0]);
        let a = align_traces(&t, &t, &[StepKind::CcDischarge, StepKind::CcCharge]).unwrap();
        assert_eq!(a.mode, AlignMode::PerStep);
        for s in &a.segments {
            assert_eq!(s.sim, s.target);
        }
    }

    #[test]
    fn every_step_gets_the_fixed_point_count() {
        let a = synthetic(&[699], &[3600.0]);
        let b = synthetic(&[1299], &[3000.0]);
        assert_eq!(a.len(), 700);
        assert_eq!(b.len(), 1300);
        let p = align_traces(&a, &b, &[StepKind::CcDischarge]).unwrap();
        assert_eq!(p.segments.len(), 1);
        assert_eq!(p.segments[0].sim.voltage.len(), ALIGN_POINTS);
        assert_eq!(p.segments[0].target.voltage.len(), ALIGN_POINTS);
    }

    #[test]
    fn missing_step_falls_back_to_whole_trace() {
        let a = synthetic(&[100, 40, 20], &[3600.0, 1800.0, 600.0]);
        let b = synthetic(&[100, 40], &[3600.0, 1800.0]);
        let p = align_traces(&b, &a, &[StepKind::CcDischarge, StepKind::CcCharge, StepKind::Cv]).unwrap();
        assert!(p.step_mismatch());
        assert_eq!(p.segments.len(), 1);
        assert_eq!(p.segments[0].sim.voltage.len(), ALIGN_POINTS);
    }

    #[test]
    fn throughput_restarts_each_step() {
        let t = synthetic(&[10, 10], &[3600.0, 3600.0]);
        let p = align_traces(&t, &t, &[StepKind::CcDischarge, StepKind::CcCharge]).unwrap();
        let s1 = &p.segments[1].sim.throughput;
        // the first resampled point sits at the step's first sample, 1/10 of the way in
        assert!((s1[0] - 0.75 * 360.0 / 3600.0).abs() < 1e-12);
        assert!((s1[ALIGN_POINTS - 1] - (0.75 * 360.0 + 0.5 * 3240.0) / 3600.0).abs() < 1e-12);
    }

    #[test]
    fn sample_durations_add_up() {
        let t = synthetic(&[7, 9], &[700.0, 900.0]);
        let d = sample_durations(&t);
        assert!((d[0] - 700.0).abs() < 1e-9);
        assert!((d[1] - 900.0).abs() < 1e-9);
    }
}
