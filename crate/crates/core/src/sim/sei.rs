//! Reaction-limited SEI growth on the negative particles.
//!
//! The side reaction rate per unit area is
//! `r = k·c_solv·exp(−½·F·φ/(RT))`, with `φ = U_n + η_n` the negative
//! solid-electrolyte potential difference. Solvent reaching the reacting
//! surface is attenuated by the film through two channels (bulk solvent and EC),
//! each with penetration length `ℓ = √(D·t_cycle)`.

use crate::params::SeiDesign;
use crate::sim::kinetics::{FARADAY, GAS_CONSTANT};

/// Solvent concentration at the reacting surface [mol·m⁻³].
pub fn solvent_concentration(sei: &SeiDesign, thickness: f64, cycle_time_s: f64) -> f64 {
    let attenuate = |diffusivity: f64| {
        let length = (diffusivity * cycle_time_s).sqrt();
        if length > 0.0 {
            (-thickness / length).exp()
        } else {
            0.0
        }
    };
    sei.bulk_solvent_concentration * attenuate(sei.solvent_diffusivity)
        + sei.ec_initial_concentration * attenuate(sei.ec_diffusivity)
}

/// SEI formation rate [mol·m⁻²·s⁻¹].
pub fn reaction_rate(sei: &SeiDesign, thickness: f64, cycle_time_s: f64, phi_neg: f64, temperature: f64) -> f64 {
    let drive = (-0.5 * FARADAY * phi_neg / (GAS_CONSTANT * temperature)).exp();
    sei.rate_constant * solvent_concentration(sei, thickness, cycle_time_s) * drive
}

/// Film resistance [Ω] across the whole negative interfacial area.
pub fn film_resistance(sei: &SeiDesign, thickness: f64, interfacial_area: f64) -> f64 {
    thickness / (sei.conductivity * interfacial_area)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::DegradationParameterSet;

    fn sei() -> SeiDesign {
        DegradationParameterSet::default_set().resolve().unwrap()
    }

    #[test]
    fn zero_rate_constant_means_no_growth() {
        let mut s = sei();
        s.rate_constant = 0.0;
        assert_eq!(reaction_rate(&s, 5e-9, 7000.0, 0.1, 298.15), 0.0);
    }

    #[test]
    fn thicker_film_reacts_slower() {
        let s = sei();
        let thin = reaction_rate(&s, 5e-9, 7000.0, 0.1, 298.15);
        let thick = reaction_rate(&s, 5e-8, 7000.0, 0.1, 298.15);
        assert!(thick < thin);
    }

    #[test]
    fn lower_potential_reacts_faster() {
        let s = sei();
        assert!(reaction_rate(&s, 5e-9, 7000.0, 0.05, 298.15) > reaction_rate(&s, 5e-9, 7000.0, 0.5, 298.15));
    }

    #[test]
    fn faster_solvent_diffusion_raises_surface_solvent() {
        let mut s = sei();
        let base = solvent_concentration(&s, 2e-8, 7000.0);
        s.solvent_diffusivity *= 10.0;
        assert!(solvent_concentration(&s, 2e-8, 7000.0) > base);
        let mut s = sei();
        s.ec_diffusivity *= 10.0;
        assert!(solvent_concentration(&s, 2e-8, 7000.0) > base);
    }

    #[test]
    fn film_resistance_is_linear_in_thickness() {
        let s = sei();
        let a = film_resistance(&s, 1e-8, 2.0);
        let b = film_resistance(&s, 2e-8, 2.0);
        assert!((b / a - 2.0).abs() < 1e-14);
    }
}
