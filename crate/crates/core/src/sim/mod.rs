//! Single-particle forward model with lumped electrolyte resistance and SEI growth.

pub mod cycles;
pub mod diffusion;
pub mod driver;
pub mod kinetics;
pub mod ocp;
pub mod protocol;
pub mod sei;
pub mod state;
pub mod trace;

pub use cycles::{run_cycles, run_cycles_with, CycleRecord, CycleSeries};
pub use diffusion::{step_particle_diffusion, DiffusionError, ShellGrid};
pub use driver::{cell_voltage, run_protocol, run_protocol_with, SimError, SimOptions, RADIAL_SHELLS};
pub use kinetics::{
    butler_volmer_overpotential, electrolyte_resistance, exchange_current_density, theoretical_capacity,
    KineticsError, FARADAY, GAS_CONSTANT,
};
pub use ocp::{ocp_negative, ocp_positive, OcpCurve, OcpCurves};
pub use protocol::{Direction, Protocol, ProtocolError, Step, StepKind};
pub use state::CellState;
pub use trace::{Failure, SimulationTrace, TerminationEvent, TraceError};
