//! Closed-loop calibration of a single-particle battery model against
//! charge/discharge data.

pub mod bench;
pub mod dataio;
pub mod eval;
pub mod feedback;
pub mod memory;
pub mod metrics;
pub mod orchestrator;
pub mod params;
pub mod proposer;
pub mod seed;
pub mod sim;
