//! Cycling protocols: ordered constant-current, constant-voltage and rest steps.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Samples recorded per constant-current step at the nominal rate.
pub const SAMPLES_PER_STEP: f64 = 500.0;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("protocol has no steps")]
    Empty,
    #[error("step {step}: {reason}")]
    InvalidStep { step: usize, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read or write protocol file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed protocol JSON: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Charge,
    Discharge,
}

impl Direction {
    /// Sign of the terminal current under the discharge-positive convention.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Charge => -1.0,
            Direction::Discharge => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    CcCharge,
    CcDischarge,
    Cv,
    Rest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Step {
    ConstantCurrent {
        c_rate: f64,
        direction: Direction,
        voltage_cutoff: f64,
    },
    ConstantVoltage {
        hold_voltage: f64,
        /// Fraction of the 1C current.
        current_cutoff: f64,
    },
    Rest {
        duration_s: f64,
    },
}

impl Step {
    pub fn kind(&self) -> StepKind {
        match self {
            Step::ConstantCurrent { direction: Direction::Charge, .. } => StepKind::CcCharge,
            Step::ConstantCurrent { direction: Direction::Discharge, .. } => StepKind::CcDischarge,
            Step::ConstantVoltage { .. } => StepKind::Cv,
            Step::Rest { .. } => StepKind::Rest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub name: String,
    pub steps: Vec<Step>,
    pub max_step_duration_s: f64,
    pub sample_interval_s: f64,
}

impl Protocol {
    /// Discharge at `c_rate`, rest, recharge at `c_rate`, then hold the upper
    /// cutoff until the current drops to C/20.
    pub fn cccv(c_rate: f64, lower_cutoff: f64, upper_cutoff: f64) -> Self {
        Self {
            name: format!("cccv-{}C", fmt_rate(c_rate)),
            steps: vec![
                Step::ConstantCurrent { c_rate, direction: Direction::Discharge, voltage_cutoff: lower_cutoff },
                Step::Rest { duration_s: 600.0 },
                Step::ConstantCurrent { c_rate, direction: Direction::Charge, voltage_cutoff: upper_cutoff },
                Step::ConstantVoltage { hold_voltage: upper_cutoff, current_cutoff: 0.05 },
            ],
            max_step_duration_s: default_max_duration(c_rate),
            sample_interval_s: default_sample_interval(c_rate),
        }
    }

    /// A protocol from a different family than [`Protocol::cccv`]: discharge at
    /// `c_rate`, long rest, fixed 0.5C recharge with a tighter C/50 taper, rest.
    pub fn held_out(c_rate: f64, lower_cutoff: f64, upper_cutoff: f64) -> Self {
        let slowest = c_rate.min(0.5);
        Self {
            name: format!("heldout-{}C", fmt_rate(c_rate)),
            steps: vec![
                Step::ConstantCurrent { c_rate, direction: Direction::Discharge, voltage_cutoff: lower_cutoff },
                Step::Rest { duration_s: 1800.0 },
                Step::ConstantCurrent { c_rate: 0.5, direction: Direction::Charge, voltage_cutoff: upper_cutoff },
                Step::ConstantVoltage { hold_voltage: upper_cutoff, current_cutoff: 0.02 },
                Step::Rest { duration_s: 600.0 },
            ],
            max_step_duration_s: default_max_duration(slowest),
            sample_interval_s: default_sample_interval(c_rate.max(0.5)),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("protocol serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProtocolError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProtocolError> {
        std::fs::write(path, self.to_json()).map_err(|source| ProtocolError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn kinds(&self) -> Vec<StepKind> {
        self.steps.iter().map(Step::kind).collect()
    }

    /// Checks structure and that every voltage lies in `[lower, upper]`.
    pub fn validate(&self, lower: f64, upper: f64) -> Result<(), ProtocolError> {
        if self.steps.is_empty() {
            return Err(ProtocolError::Empty);
        }
        if !(self.max_step_duration_s > 0.0) || !self.max_step_duration_s.is_finite() {
            return Err(ProtocolError::Invalid(format!(
                "max step duration must be positive, got {}",
                self.max_step_duration_s
            )));
        }
        if !(self.sample_interval_s > 0.0) || !self.sample_interval_s.is_finite() {
            return Err(ProtocolError::Invalid(format!(
                "sample interval must be positive, got {}",
                self.sample_interval_s
            )));
        }
        let in_window = |v: f64| v >= lower && v <= upper;
        for (i, step) in self.steps.iter().enumerate() {
            let bad = |reason: String| Err(ProtocolError::InvalidStep { step: i, reason });
            match *step {
                Step::ConstantCurrent { c_rate, voltage_cutoff, .. } => {
                    if !(c_rate > 0.0) || !c_rate.is_finite() {
                        return bad(format!("c_rate must be positive, got {c_rate}"));
                    }
                    if !in_window(voltage_cutoff) {
                        return bad(format!("cutoff {voltage_cutoff} V outside [{lower}, {upper}]"));
                    }
                }
                Step::ConstantVoltage { hold_voltage, current_cutoff } => {
                    if !in_window(hold_voltage) {
                        return bad(format!("hold voltage {hold_voltage} V outside [{lower}, {upper}]"));
                    }
                    if !(current_cutoff > 0.0) || !current_cutoff.is_finite() {
                        return bad(format!("current cutoff must be positive, got {current_cutoff}"));
                    }
                }
                Step::Rest { duration_s } => {
                    if !(duration_s > 0.0) || !duration_s.is_finite() {
                        return bad(format!("rest duration must be positive, got {duration_s}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Nominal duration of one pass through the protocol [s]: full-length CC
    /// steps plus rests. CV steps are excluded because their length is not known
    /// in advance.
    pub fn nominal_duration_s(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| match *s {
                Step::ConstantCurrent { c_rate, .. } => 3600.0 / c_rate,
                Step::Rest { duration_s } => duration_s,
                Step::ConstantVoltage { .. } => 0.0,
            })
            .sum()
    }
}

pub fn default_sample_interval(c_rate: f64) -> f64 {
    3600.0 / (c_rate * SAMPLES_PER_STEP)
}

fn default_max_duration(c_rate: f64) -> f64 {
    3.0 * 3600.0 / c_rate
}

fn fmt_rate(c: f64) -> String {
    format!("{c}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cccv_validates_inside_window() {
        let p = Protocol::cccv(1.0, 2.5, 4.2);
        p.validate(2.5, 4.2).unwrap();
        assert_eq!(p.kinds(), vec![StepKind::CcDischarge, StepKind::Rest, StepKind::CcCharge, StepKind::Cv]);
        assert_eq!(p.sample_interval_s, 7.2);
        assert_eq!(p.name, "cccv-1C");
        assert_eq!(Protocol::cccv(0.2, 2.5, 4.2).name, "cccv-0.2C");
    }

    #[test]
    fn held_out_differs_from_fitting_protocol() {
        let a = Protocol::cccv(1.0, 2.5, 4.2);
        let b = Protocol::held_out(1.0, 2.5, 4.2);
        b.validate(2.5, 4.2).unwrap();
        assert_ne!(a.steps, b.steps);
    }

    #[test]
    fn rejects_invalid_steps() {
        let mut p = Protocol::cccv(1.0, 2.5, 4.2);
        p.steps.clear();
        assert!(matches!(p.validate(2.5, 4.2), Err(ProtocolError::Empty)));

        let mut p = Protocol::cccv(1.0, 2.5, 4.2);
        p.steps[0] = Step::ConstantCurrent { c_rate: 0.0, direction: Direction::Discharge, voltage_cutoff: 3.0 };
        assert!(matches!(p.validate(2.5, 4.2), Err(ProtocolError::InvalidStep { step: 0, .. })));

        let p = Protocol::cccv(1.0, 2.4, 4.2);
        assert!(p.validate(2.5, 4.2).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = Protocol::held_out(2.0, 2.5, 4.2);
        let q = Protocol::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
        assert!(p.to_json().contains("\"type\": \"constant_current\""));
    }

    #[test]
    fn nominal_duration_counts_cc_and_rest() {
        let p = Protocol::cccv(2.0, 2.5, 4.2);
        assert_eq!(p.nominal_duration_s(), 1800.0 + 600.0 + 1800.0);
    }
}
