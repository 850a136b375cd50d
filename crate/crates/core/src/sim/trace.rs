//! Simulated (or measured) time series and how the run ended.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CSV_HEADER: [&str; 5] = ["time_s", "voltage_v", "current_a", "capacity_ah", "step_index"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationEvent {
    /// The final step ran for its full duration (rests, or a CC/CV step that hit
    /// the maximum step duration).
    Completed,
    /// The final step was a CC step that reached its voltage cutoff.
    VoltageCutoff,
    /// The final step was a CV step whose current fell below its cutoff.
    CurrentCutoff,
    SolverFailure,
    ConcentrationBoundViolation,
}

impl TerminationEvent {
    pub fn is_failure(self) -> bool {
        matches!(self, Self::SolverFailure | Self::ConcentrationBoundViolation)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::VoltageCutoff => "voltage_cutoff",
            Self::CurrentCutoff => "current_cutoff",
            Self::SolverFailure => "solver_failure",
            Self::ConcentrationBoundViolation => "concentration_bound_violation",
        }
    }
}

impl std::fmt::Display for TerminationEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub step: usize,
    pub time_s: f64,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace CSV header must be {expected:?}, got {found:?}")]
    Header { expected: Vec<String>, found: Vec<String> },
    #[error("trace CSV row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("trace file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub time: Vec<f64>,
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
    pub capacity: Vec<f64>,
    pub step_index: Vec<usize>,
    pub step_durations: Vec<f64>,
    pub event: TerminationEvent,
    pub failure: Option<Failure>,
    /// Charge delivered while discharging [Ah], integrated from the applied
    /// (piecewise-constant) current.
    pub discharge_capacity_ah: f64,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Short event tag, e.g. `completed` or `solver_failure@step2`.
    pub fn event_label(&self) -> String {
        match &self.failure {
            Some(f) if self.event.is_failure() => format!("{}@step{}", self.event, f.step),
            _ => self.event.to_string(),
        }
    }

    pub fn succeeded(&self) -> bool {
        !self.event.is_failure()
    }

    /// Indices of samples belonging to `step`.
    pub fn step_range(&self, step: usize) -> Option<std::ops::Range<usize>> {
        let start = self.step_index.iter().position(|&s| s == step)?;
        let len = self.step_index[start..].iter().take_while(|&&s| s == step).count();
        Some(start..start + len)
    }

    /// Distinct step indices in order of appearance.
    pub fn steps_present(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for &s in &self.step_index {
            if out.last() != Some(&s) {
                out.push(s);
            }
        }
        out
    }

    pub fn final_capacity(&self) -> f64 {
        self.capacity.last().copied().unwrap_or(0.0)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for i in 0..self.len() {
            w.write_record([
                self.time[i].to_string(),
                self.voltage[i].to_string(),
                self.current[i].to_string(),
                self.capacity[i].to_string(),
                self.step_index[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| TraceError::Csv(e.into()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), TraceError> {
        let file = std::fs::File::create(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a trace written by [`SimulationTrace::write_csv`]. The event is
    /// recorded as `completed`; step durations are recovered from timestamps.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, TraceError> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(TraceError::Header {
                expected: CSV_HEADER.iter().map(|s| s.to_string()).collect(),
                found: header,
            });
        }
        let mut t = Self::empty();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64, TraceError> {
                rec[k].trim().parse::<f64>().map_err(|e| TraceError::Row {
                    row: row + 1,
                    reason: format!("column {}: {e}", CSV_HEADER[k]),
                })
            };
            t.time.push(num(0)?);
            t.voltage.push(num(1)?);
            t.current.push(num(2)?);
            t.capacity.push(num(3)?);
            let step = rec[4].trim().parse::<usize>().map_err(|e| TraceError::Row {
                row: row + 1,
                reason: format!("column step_index: {e}"),
            })?;
            t.step_index.push(step);
        }
        t.rebuild_summaries();
        Ok(t)
    }

    pub fn load_csv(path: &Path) -> Result<Self, TraceError> {
        let file = std::fs::File::open(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub(crate) fn empty() -> Self {
        Self {
            time: Vec::new(),
            voltage: Vec::new(),
            current: Vec::new(),
            capacity: Vec::new(),
            step_index: Vec::new(),
            step_durations: Vec::new(),
            event: TerminationEvent::Completed,
            failure: None,
            discharge_capacity_ah: 0.0,
        }
    }

    /// Recomputes step durations and discharge capacity from the samples, for
    /// traces that did not come from the simulator.
    pub fn rebuild_summaries(&mut self) {
        let steps = self.steps_present();
        let n_steps = steps.iter().copied().max().map_or(0, |m| m + 1);
        let mut durations = vec![0.0; n_steps];
        let mut discharged = 0.0;
        for i in 1..self.len() {
            let dt = self.time[i] - self.time[i - 1];
            durations[self.step_index[i]] += dt;
            let mean = 0.5 * (self.current[i] + self.current[i - 1]);
            if mean > 0.0 {
                discharged += mean * dt / 3600.0;
            }
        }
        self.step_durations = durations;
        self.discharge_capacity_ah = discharged;
    }
}

/// Cumulative trapezoid integral of `current` over `time`, in Ah.
pub fn integrate_capacity(time: &[f64], current: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(time.len());
    let mut acc = 0.0;
    for i in 0..time.len() {
        if i > 0 {
            acc += 0.5 * (current[i] + current[i - 1]) * (time[i] - time[i - 1]) / 3600.0;
        }
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SimulationTrace {
        let time = vec![0.0, 1.0, 2.5, 4.0, 5.0];
        let current = vec![1.0, 1.0, 1.0, -0.5, -0.5];
        let mut t = SimulationTrace::empty();
        t.capacity = integrate_capacity(&time, &current);
        t.time = time;
        t.current = current;
        t.voltage = vec![4.0, 3.9, 3.8, 3.9, 4.0];
        t.step_index = vec![0, 0, 0, 1, 1];
        t.rebuild_summaries();
        t
    }

    #[test]
    fn trapezoid_capacity() {
        let t = sample();
        assert_eq!(t.capacity[2], 2.5 / 3600.0);
        let last = 2.5 / 3600.0 + 0.25 * 1.5 / 3600.0 - 0.5 / 3600.0;
        assert!((t.final_capacity() - last).abs() < 1e-18);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = sample();
        let text = t.to_csv_string();
        assert!(text.starts_with("time_s,voltage_v,current_a,capacity_ah,step_index\n"));
        let back = SimulationTrace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.time, t.time);
        assert_eq!(back.voltage, t.voltage);
        assert_eq!(back.capacity, t.capacity);
        assert_eq!(back.step_index, t.step_index);
        assert_eq!(back.step_durations, t.step_durations);
    }

    #[test]
    fn csv_rejects_wrong_header() {
        let err = SimulationTrace::read_csv("t,v,i,q,s\n0,1,2,3,0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Header { .. }));
    }

    #[test]
    fn step_ranges_and_labels() {
        let mut t = sample();
        assert_eq!(t.step_range(1), Some(3..5));
        assert_eq!(t.step_range(7), None);
        assert_eq!(t.steps_present(), vec![0, 1]);
        assert_eq!(t.event_label(), "completed");
        t.event = TerminationEvent::SolverFailure;
        t.failure = Some(Failure { step: 2, time_s: 5.0, message: "no bracket".into() });
        assert_eq!(t.event_label(), "solver_failure@step2");
        assert!(!t.succeeded());
    }
}
