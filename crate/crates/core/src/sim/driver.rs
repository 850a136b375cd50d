//! Protocol driver: integrates the two particles under CC, CV and rest steps.

use thiserror::Error;

use crate::params::{CellDesign, DegradationParameterSet, ParamError, PhysicalParameterSet, SeiDesign};
use crate::sim::diffusion::ShellGrid;
use crate::sim::kinetics::{
    butler_volmer_overpotential, electrolyte_resistance_of, exchange_current_density, FARADAY,
};
use crate::sim::ocp::OcpCurves;
use crate::sim::protocol::{Protocol, ProtocolError, Step};
use crate::sim::sei;
use crate::sim::state::CellState;
use crate::sim::trace::{integrate_capacity, Failure, SimulationTrace, TerminationEvent};

/// Default number of radial shells per particle.
pub const RADIAL_SHELLS: usize = 20;

const CV_BRACKET_C: f64 = 5.0;
const CV_TOLERANCE_V: f64 = 1e-6;
const CV_ACCEPT_V: f64 = 1e-4;
const CV_MAX_ITER: usize = 100;
const CUTOFF_BISECTIONS: usize = 60;

/// Errors raised before integration starts. Failures during integration are
/// reported through [`SimulationTrace::event`] instead.
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("invalid initial state: {0}")]
    State(String),
    #[error("cell voltage undefined: {0}")]
    Voltage(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub radial_shells: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { radial_shells: RADIAL_SHELLS }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum StepFault {
    Concentration(String),
    Solver(String),
}

impl StepFault {
    fn event(&self) -> TerminationEvent {
        match self {
            StepFault::Concentration(_) => TerminationEvent::ConcentrationBoundViolation,
            StepFault::Solver(_) => TerminationEvent::SolverFailure,
        }
    }

    fn message(&self) -> &str {
        match self {
            StepFault::Concentration(m) | StepFault::Solver(m) => m,
        }
    }
}

/// Outcome of one trial step: the advanced state, terminal voltage and the
/// negative solid-electrolyte potential used by the next SEI rate evaluation.
struct Advanced {
    state: CellState,
    voltage: f64,
    phi_neg: f64,
}

pub(crate) struct Engine<'a> {
    design: CellDesign,
    ocp: &'a OcpCurves,
    sei: Option<SeiDesign>,
    neg_grid: ShellGrid,
    pos_grid: ShellGrid,
    area_neg: f64,
    area_pos: f64,
    r_electrolyte: f64,
    cycle_time_s: f64,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(
        params: &'a PhysicalParameterSet,
        degradation: Option<&DegradationParameterSet>,
        cycle_time_s: f64,
        options: SimOptions,
    ) -> Result<Self, SimError> {
        let design = params.resolve()?;
        let sei = degradation.map(DegradationParameterSet::resolve).transpose()?;
        let shells = options.radial_shells;
        let neg_grid = ShellGrid::new(shells, design.negative.particle_radius)
            .map_err(|e| SimError::State(e.to_string()))?;
        let pos_grid = ShellGrid::new(shells, design.positive.particle_radius)
            .map_err(|e| SimError::State(e.to_string()))?;
        Ok(Self {
            area_neg: design.interfacial_area(&design.negative),
            area_pos: design.interfacial_area(&design.positive),
            r_electrolyte: electrolyte_resistance_of(&design),
            design,
            ocp: &params.ocp,
            sei,
            neg_grid,
            pos_grid,
            cycle_time_s,
        })
    }

    pub(crate) fn design(&self) -> &CellDesign {
        &self.design
    }

    pub(crate) fn sei(&self) -> Option<&SeiDesign> {
        self.sei.as_ref()
    }

    pub(crate) fn shells(&self) -> usize {
        self.neg_grid.len()
    }

    fn sei_rate(&self, state: &CellState, phi_neg: f64) -> f64 {
        match &self.sei {
            Some(s) => sei::reaction_rate(s, state.sei_thickness, self.cycle_time_s, phi_neg, self.design.temperature),
            None => 0.0,
        }
    }

    fn lithium_ratio(&self) -> f64 {
        self.sei.as_ref().map_or(0.0, |s| s.lithium_ratio)
    }

    /// Outward molar fluxes [mol·m⁻²·s⁻¹] for terminal current `current` and SEI
    /// rate `r`.
    fn fluxes(&self, current: f64, r: f64) -> (f64, f64) {
        let neg = current / (FARADAY * self.area_neg) + self.lithium_ratio() * r;
        let pos = -current / (FARADAY * self.area_pos);
        (neg, pos)
    }

    /// Terminal voltage for given particle profiles without advancing time.
    /// With `relaxed`, the surface concentration is reconstructed with zero
    /// boundary gradient: the profile has not yet felt the applied flux, as at
    /// the instant a current is switched on.
    fn voltage_at(
        &self,
        neg: &[f64],
        pos: &[f64],
        sei_thickness: f64,
        current: f64,
        r: f64,
        relaxed: bool,
    ) -> Result<(f64, f64), StepFault> {
        let d = &self.design;
        let (n_neg, n_pos) = self.fluxes(current, r);
        let gradient_flux = |n: f64| if relaxed { 0.0 } else { n };
        let cs_neg = self.neg_grid.surface_concentration(neg, gradient_flux(n_neg), d.negative.diffusivity);
        let cs_pos = self.pos_grid.surface_concentration(pos, gradient_flux(n_pos), d.positive.diffusivity);
        let (eta_neg, u_neg) = self.electrode_terms(cs_neg, n_neg, &d.negative, "negative", true)?;
        let (eta_pos, u_pos) = self.electrode_terms(cs_pos, n_pos, &d.positive, "positive", false)?;
        let r_film = match &self.sei {
            Some(s) => sei::film_resistance(s, sei_thickness, self.area_neg),
            None => 0.0,
        };
        let v = u_pos - u_neg + eta_pos - eta_neg - current * (self.r_electrolyte + r_film);
        if !v.is_finite() {
            return Err(StepFault::Solver(format!("non-finite voltage at I={current} A")));
        }
        Ok((v, u_neg + eta_neg))
    }

    fn electrode_terms(
        &self,
        c_surf: f64,
        molar_flux: f64,
        e: &crate::params::ElectrodeDesign,
        label: &str,
        negative: bool,
    ) -> Result<(f64, f64), StepFault> {
        if !(c_surf > 0.0 && c_surf < e.max_concentration) {
            return Err(StepFault::Concentration(format!(
                "{label} surface concentration {c_surf:.6e} outside (0, {})",
                e.max_concentration
            )));
        }
        let x = c_surf / e.max_concentration;
        let u = if negative { self.ocp.negative.eval(x) } else { self.ocp.positive.eval(x) };
        let j0 = exchange_current_density(c_surf, e.max_concentration, self.design.electrolyte_concentration, e.reaction_rate)
            .map_err(|err| StepFault::Concentration(err.to_string()))?;
        let eta = butler_volmer_overpotential(FARADAY * molar_flux, j0, self.design.temperature)
            .map_err(|err| StepFault::Solver(err.to_string()))?;
        Ok((eta, u))
    }

    fn advance(&self, state: &CellState, current: f64, dt: f64, r: f64) -> Result<Advanced, StepFault> {
        let d = &self.design;
        let (n_neg, n_pos) = self.fluxes(current, r);
        let mut next = state.clone();
        self.neg_grid
            .step(&mut next.negative, n_neg, d.negative.diffusivity, dt)
            .map_err(|e| StepFault::Solver(e.to_string()))?;
        self.pos_grid
            .step(&mut next.positive, n_pos, d.positive.diffusivity, dt)
            .map_err(|e| StepFault::Solver(e.to_string()))?;
        for (profile, c_max, label) in [
            (&next.negative, d.negative.max_concentration, "negative"),
            (&next.positive, d.positive.max_concentration, "positive"),
        ] {
            if profile.iter().any(|&c| !(0.0..=c_max).contains(&c)) {
                return Err(StepFault::Concentration(format!("{label} particle left [0, {c_max}]")));
            }
        }
        if let Some(s) = &self.sei {
            next.sei_thickness += s.partial_molar_volume * r * dt;
            next.inventory_loss_mol += s.lithium_ratio * r * self.area_neg * dt;
        }
        next.time_s += dt;
        let (voltage, phi_neg) = self.voltage_at(&next.negative, &next.positive, next.sei_thickness, current, r, false)?;
        Ok(Advanced { state: next, voltage, phi_neg })
    }

    /// Runs `protocol` from `state`, returning the trace and the final state.
    pub(crate) fn run(&self, protocol: &Protocol, mut state: CellState) -> (SimulationTrace, CellState) {
        let one_c = self.design.one_c_current();
        let mut rec = Recorder::new(state.time_s);
        let first_current = match protocol.steps[0] {
            Step::ConstantCurrent { c_rate, direction, .. } => direction.sign() * c_rate * one_c,
            _ => 0.0,
        };
        let mut phi_neg = match self.voltage_at(&state.negative, &state.positive, state.sei_thickness, first_current, 0.0, true) {
            Ok((v, phi)) => {
                rec.push(0.0, v, first_current, 0);
                phi
            }
            Err(fault) => {
                let trace = rec.finish(Some((fault, 0, state.time_s)), Vec::new());
                return (trace, state);
            }
        };

        let mut durations = Vec::with_capacity(protocol.steps.len());
        let mut last_event = TerminationEvent::Completed;
        for (k, step) in protocol.steps.iter().enumerate() {
            let start = state.time_s;
            let outcome = match *step {
                Step::ConstantCurrent { c_rate, direction, voltage_cutoff } => self.run_cc(
                    &mut state,
                    &mut phi_neg,
                    &mut rec,
                    k,
                    direction.sign() * c_rate * one_c,
                    voltage_cutoff,
                    protocol,
                ),
                Step::ConstantVoltage { hold_voltage, current_cutoff } => self.run_cv(
                    &mut state,
                    &mut phi_neg,
                    &mut rec,
                    k,
                    hold_voltage,
                    current_cutoff * one_c,
                    protocol,
                ),
                Step::Rest { duration_s } => {
                    self.run_rest(&mut state, &mut phi_neg, &mut rec, k, duration_s, protocol.sample_interval_s)
                }
            };
            durations.push(state.time_s - start);
            match outcome {
                Ok(ev) => last_event = ev,
                Err(fault) => {
                    let trace = rec.finish(Some((fault, k, state.time_s)), durations);
                    return (trace, state);
                }
            }
        }
        let mut trace = rec.finish(None, durations);
        trace.event = last_event;
        (trace, state)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_cc(
        &self,
        state: &mut CellState,
        phi_neg: &mut f64,
        rec: &mut Recorder,
        k: usize,
        current: f64,
        cutoff: f64,
        protocol: &Protocol,
    ) -> Result<TerminationEvent, StepFault> {
        let discharging = current > 0.0;
        let beyond = |v: f64| if discharging { v <= cutoff } else { v >= cutoff };
        let mut elapsed = 0.0;
        loop {
            let remaining = protocol.max_step_duration_s - elapsed;
            if remaining <= 1e-9 {
                return Ok(TerminationEvent::Completed);
            }
            let dt = protocol.sample_interval_s.min(remaining);
            let r = self.sei_rate(state, *phi_neg);
            match self.advance(state, current, dt, r) {
                Ok(a) if !beyond(a.voltage) => {
                    elapsed += dt;
                    self.accept(state, phi_neg, rec, a, current, dt, k);
                }
                Ok(_) | Err(StepFault::Concentration(_)) => {
                    // locate the crossing inside (0, dt]
                    let mut lo = 0.0;
                    let mut hi = dt;
                    let mut best: Option<Advanced> = None;
                    let mut last_fault: Option<StepFault> = None;
                    for _ in 0..CUTOFF_BISECTIONS {
                        let mid = 0.5 * (lo + hi);
                        match self.advance(state, current, mid, r) {
                            Ok(a) if !beyond(a.voltage) => {
                                lo = mid;
                                best = Some(a);
                            }
                            Ok(_) => hi = mid,
                            Err(f @ StepFault::Concentration(_)) => {
                                hi = mid;
                                last_fault = Some(f);
                            }
                            Err(f) => return Err(f),
                        }
                    }
                    match best {
                        Some(a) => self.accept(state, phi_neg, rec, a, current, lo, k),
                        None => {
                            if let Some(f) = last_fault {
                                return Err(f);
                            }
                        }
                    }
                    return Ok(TerminationEvent::VoltageCutoff);
                }
                Err(f) => return Err(f),
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn run_cv(
        &self,
        state: &mut CellState,
        phi_neg: &mut f64,
        rec: &mut Recorder,
        k: usize,
        hold: f64,
        current_cutoff: f64,
        protocol: &Protocol,
    ) -> Result<TerminationEvent, StepFault> {
        let bracket = CV_BRACKET_C * self.design.one_c_current();
        let mut elapsed = 0.0;
        loop {
            let remaining = protocol.max_step_duration_s - elapsed;
            if remaining <= 1e-9 {
                return Ok(TerminationEvent::Completed);
            }
            let dt = protocol.sample_interval_s.min(remaining);
            let r = self.sei_rate(state, *phi_neg);
            // residual V(I) − V_hold; decreasing in I
            let residual = |i: f64| -> Result<(f64, Option<Advanced>), StepFault> {
                match self.advance(state, i, dt, r) {
                    Ok(a) => Ok((a.voltage - hold, Some(a))),
                    Err(StepFault::Concentration(_)) => {
                        Ok((if i > 0.0 { f64::NEG_INFINITY } else { f64::INFINITY }, None))
                    }
                    Err(f) => Err(f),
                }
            };
            let (f_lo, _) = residual(-bracket)?;
            let (f_hi, _) = residual(bracket)?;
            if !(f_lo > 0.0 && f_hi < 0.0) {
                return Err(StepFault::Solver(format!(
                    "no bracketing current for CV hold at {hold} V (residuals {f_lo:.3e}, {f_hi:.3e})"
                )));
            }
            // Illinois false position, falling back to bisection while an end
            // of the bracket is infinite
            let (mut lo, mut hi) = (-bracket, bracket);
            let (mut f_lo, mut f_hi) = (f_lo, f_hi);
            let mut side = 0i8;
            let mut found: Option<(f64, f64, Advanced)> = None;
            for _ in 0..CV_MAX_ITER {
                let mid = if f_lo.is_finite() && f_hi.is_finite() {
                    let x = hi - f_hi * (hi - lo) / (f_hi - f_lo);
                    if x > lo && x < hi { x } else { 0.5 * (lo + hi) }
                } else {
                    0.5 * (lo + hi)
                };
                let (f, adv) = residual(mid)?;
                if let Some(a) = adv {
                    let better = found.as_ref().map_or(true, |(_, fb, _)| f.abs() < fb.abs());
                    if better {
                        found = Some((mid, f, a));
                    }
                }
                if f.abs() <= CV_TOLERANCE_V || hi - lo <= f64::EPSILON * bracket {
                    break;
                }
                if f > 0.0 {
                    lo = mid;
                    f_lo = f;
                    if side == 1 {
                        f_hi *= 0.5;
                    }
                    side = 1;
                } else {
                    hi = mid;
                    f_hi = f;
                    if side == -1 {
                        f_lo *= 0.5;
                    }
                    side = -1;
                }
            }
            let Some((current, _, a)) = found.filter(|(_, f, _)| f.abs() <= CV_ACCEPT_V) else {
                return Err(StepFault::Solver(format!("CV current solve did not converge at {hold} V")));
            };
            elapsed += dt;
            self.accept(state, phi_neg, rec, a, current, dt, k);
            if current.abs() < current_cutoff {
                return Ok(TerminationEvent::CurrentCutoff);
            }
        }
    }

    fn run_rest(
        &self,
        state: &mut CellState,
        phi_neg: &mut f64,
        rec: &mut Recorder,
        k: usize,
        duration: f64,
        interval: f64,
    ) -> Result<TerminationEvent, StepFault> {
        let n = (duration / interval).ceil().max(1.0) as usize;
        let dt = duration / n as f64;
        for _ in 0..n {
            let r = self.sei_rate(state, *phi_neg);
            let a = self.advance(state, 0.0, dt, r)?;
            self.accept(state, phi_neg, rec, a, 0.0, dt, k);
        }
        Ok(TerminationEvent::Completed)
    }

    #[allow(clippy::too_many_arguments)]
    fn accept(
        &self,
        state: &mut CellState,
        phi_neg: &mut f64,
        rec: &mut Recorder,
        a: Advanced,
        current: f64,
        dt: f64,
        k: usize,
    ) {
        if current > 0.0 {
            rec.discharged_as += current * dt;
        }
        rec.push(a.state.time_s - rec.origin, a.voltage, current, k);
        *state = a.state;
        *phi_neg = a.phi_neg;
    }
}

struct Recorder {
    origin: f64,
    trace: SimulationTrace,
    discharged_as: f64,
}

impl Recorder {
    fn new(origin: f64) -> Self {
        Self { origin, trace: SimulationTrace::empty(), discharged_as: 0.0 }
    }

    fn push(&mut self, t: f64, v: f64, i: f64, step: usize) {
        if let Some(&last) = self.trace.time.last() {
            if t <= last {
                return;
            }
        }
        self.trace.time.push(t);
        self.trace.voltage.push(v);
        self.trace.current.push(i);
        self.trace.step_index.push(step);
    }

    fn finish(mut self, fault: Option<(StepFault, usize, f64)>, durations: Vec<f64>) -> SimulationTrace {
        let t = &mut self.trace;
        t.capacity = integrate_capacity(&t.time, &t.current);
        t.step_durations = durations;
        t.discharge_capacity_ah = self.discharged_as / 3600.0;
        if let Some((fault, step, time)) = fault {
            t.event = fault.event();
            t.failure = Some(Failure { step, time_s: time - self.origin, message: fault.message().to_string() });
        }
        self.trace
    }
}

/// Simulates `protocol` on a fresh (or supplied) cell. Parameter and protocol
/// problems are errors; anything that goes wrong during integration is
/// reported as the trace's termination event.
pub fn run_protocol(
    params: &PhysicalParameterSet,
    protocol: &Protocol,
    degradation: Option<&DegradationParameterSet>,
    initial_state: Option<&CellState>,
) -> Result<SimulationTrace, SimError> {
    run_protocol_with(params, protocol, degradation, initial_state, SimOptions::default()).map(|(t, _)| t)
}

/// As [`run_protocol`], with explicit options, also returning the final state.
pub fn run_protocol_with(
    params: &PhysicalParameterSet,
    protocol: &Protocol,
    degradation: Option<&DegradationParameterSet>,
    initial_state: Option<&CellState>,
    options: SimOptions,
) -> Result<(SimulationTrace, CellState), SimError> {
    let engine = Engine::new(params, degradation, protocol.nominal_duration_s(), options)?;
    let d = engine.design();
    protocol.validate(d.lower_cutoff, d.upper_cutoff)?;
    let state = match initial_state {
        Some(s) => {
            if s.negative.len() != engine.shells() || s.positive.len() != engine.shells() {
                return Err(SimError::State(format!(
                    "state has {}/{} shells, simulator uses {}",
                    s.negative.len(),
                    s.positive.len(),
                    engine.shells()
                )));
            }
            s.validate(d).map_err(SimError::State)?;
            s.clone()
        }
        None => CellState::initial(d, engine.sei(), engine.shells(), 0.0),
    };
    Ok(engine.run(protocol, state))
}

/// Terminal voltage of `state` carrying `current` (discharge positive), with no
/// time elapsed. Film resistance is included when `degradation` is given; the
/// side reaction itself is not.
pub fn cell_voltage(
    state: &CellState,
    current: f64,
    params: &PhysicalParameterSet,
    degradation: Option<&DegradationParameterSet>,
) -> Result<f64, SimError> {
    let engine = Engine::new(params, degradation, 0.0, SimOptions { radial_shells: state.negative.len() })?;
    if state.positive.len() != state.negative.len() {
        return Err(SimError::State("particle profiles differ in length".into()));
    }
    engine
        .voltage_at(&state.negative, &state.positive, state.sei_thickness, current, 0.0, false)
        .map(|(v, _)| v)
        .map_err(|f| SimError::Voltage(f.message().to_string()))
}
