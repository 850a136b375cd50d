//! Repeated cycling with SEI state carried across cycles.

use serde::{Deserialize, Serialize};

use crate::params::{DegradationParameterSet, PhysicalParameterSet};
use crate::sim::driver::{Engine, SimError, SimOptions};
use crate::sim::protocol::Protocol;
use crate::sim::state::CellState;
use crate::sim::trace::{SimulationTrace, TerminationEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// 1-based.
    pub cycle: usize,
    pub trace: SimulationTrace,
    pub discharge_capacity_ah: f64,
    pub sei_thickness_m: f64,
    pub inventory_loss_mol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSeries {
    pub cycles: Vec<CycleRecord>,
}

impl CycleSeries {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.cycles.iter().map(|c| c.discharge_capacity_ah).collect()
    }

    /// Termination event of the last simulated cycle.
    pub fn event(&self) -> TerminationEvent {
        self.cycles.last().map_or(TerminationEvent::Completed, |c| c.trace.event)
    }

    pub fn truncated(&self) -> bool {
        self.event().is_failure()
    }
}

/// Runs `protocol` `n_cycles` times. SEI thickness and lithium inventory loss
/// carry over; particle profiles restart from the design's initial state with
/// the accumulated loss taken out of the negative electrode, so every cycle
/// starts fully rested. A failing cycle ends the series.
pub fn run_cycles(
    params: &PhysicalParameterSet,
    degradation: Option<&DegradationParameterSet>,
    protocol: &Protocol,
    n_cycles: usize,
) -> Result<CycleSeries, SimError> {
    run_cycles_with(params, degradation, protocol, n_cycles, SimOptions::default())
}

pub fn run_cycles_with(
    params: &PhysicalParameterSet,
    degradation: Option<&DegradationParameterSet>,
    protocol: &Protocol,
    n_cycles: usize,
    options: SimOptions,
) -> Result<CycleSeries, SimError> {
    if n_cycles == 0 {
        return Err(SimError::State("n_cycles must be at least 1".into()));
    }
    let engine = Engine::new(params, degradation, protocol.nominal_duration_s(), options)?;
    let d = *engine.design();
    protocol.validate(d.lower_cutoff, d.upper_cutoff)?;
    let mut cycles = Vec::with_capacity(n_cycles);
    let mut sei_thickness = engine.sei().map_or(0.0, |s| s.initial_thickness);
    let mut loss = 0.0;
    let mut clock = 0.0;
    for cycle in 1..=n_cycles {
        let mut start = CellState::initial(&d, engine.sei(), engine.shells(), loss);
        start.sei_thickness = sei_thickness;
        start.time_s = clock;
        if let Err(reason) = start.validate(&d) {
            return Err(SimError::State(format!("cycle {cycle}: {reason}")));
        }
        let (trace, end) = engine.run(protocol, start);
        sei_thickness = end.sei_thickness;
        loss = end.inventory_loss_mol;
        clock = end.time_s;
        let failed = trace.event.is_failure();
        cycles.push(CycleRecord {
            cycle,
            discharge_capacity_ah: trace.discharge_capacity_ah,
            trace,
            sei_thickness_m: sei_thickness,
            inventory_loss_mol: loss,
        });
        if failed {
            break;
        }
    }
    Ok(CycleSeries { cycles })
}
