use serde::{Deserialize, Serialize};

/// Constants of the adaptive step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSchedule {
    pub initial: f64,
    pub floor: f64,
    /// Relative worsening of total MAPE that halves the step.
    pub worsen_ratio: f64,
    /// Consecutive improvements that double the step.
    pub grow_after: usize,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { initial: 1.0, floor: 0.125, worsen_ratio: 0.5, grow_after: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSize {
    schedule: StepSchedule,
    eta: f64,
    improvements: usize,
}

impl StepSize {
    pub fn new(schedule: StepSchedule) -> Self {
        let eta = schedule.initial.clamp(schedule.floor, 1.0);
        Self { schedule, eta, improvements: 0 }
    }

    /// Fixed η = 1.
    pub fn unit() -> Self {
        Self::new(StepSchedule { initial: 1.0, floor: 1.0, ..Default::default() })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Adjusts η after a round that scored `current` following `previous`.
    pub fn observe(&mut self, previous: Option<f64>, current: f64, succeeded: bool) {
        let s = &self.schedule;
        let worse = match previous {
            Some(p) => current > p * (1.0 + s.worsen_ratio),
            None => false,
        };
        if !succeeded || worse {
            self.eta = (self.eta * 0.5).max(s.floor);
            self.improvements = 0;
        } else if previous.is_some_and(|p| current < p) {
            self.improvements += 1;
            if self.improvements >= s.grow_after {
                self.eta = (self.eta * 2.0).min(1.0);
                self.improvements = 0;
            }
        } else {
            self.improvements = 0;
        }
    }
}
