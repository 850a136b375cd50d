//! Interfacial kinetics, lumped electrolyte resistance and the coulomb-counting
//! capacity bound.

use thiserror::Error;

use crate::params::{CellDesign, ElectrodeDesign, ParamError, PhysicalParameterSet};

/// Faraday constant [C·mol⁻¹].
pub const FARADAY: f64 = 96_485.332_12;
/// Molar gas constant [J·mol⁻¹·K⁻¹].
pub const GAS_CONSTANT: f64 = 8.314_462_618;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticsError {
    #[error("surface concentration {c_surf} outside [0, {c_max}]")]
    ConcentrationBound { c_surf: f64, c_max: f64 },
    #[error("exchange current density must be positive, got {0}")]
    NonPositiveExchangeCurrent(f64),
    #[error("invalid kinetic input: {0}")]
    InvalidInput(&'static str),
}

/// `j0 = F·k·c_e^½·c_s^½·(c_max − c_s)^½` [A·m⁻²].
pub fn exchange_current_density(
    c_surf: f64,
    c_max: f64,
    c_e: f64,
    rate_constant: f64,
) -> Result<f64, KineticsError> {
    if !(0.0..=c_max).contains(&c_surf) || c_surf.is_nan() {
        return Err(KineticsError::ConcentrationBound { c_surf, c_max });
    }
    if c_e <= 0.0 {
        return Err(KineticsError::InvalidInput("electrolyte concentration must be positive"));
    }
    if rate_constant <= 0.0 {
        return Err(KineticsError::InvalidInput("rate constant must be positive"));
    }
    Ok(FARADAY * rate_constant * (c_e * c_surf * (c_max - c_surf)).sqrt())
}

/// Inverse symmetric Butler-Volmer: `η = (2RT/F)·asinh(j / 2j0)`.
pub fn butler_volmer_overpotential(
    j: f64,
    j0: f64,
    temperature: f64,
) -> Result<f64, KineticsError> {
    if !(j0 > 0.0) {
        return Err(KineticsError::NonPositiveExchangeCurrent(j0));
    }
    let thermal = 2.0 * GAS_CONSTANT * temperature / FARADAY;
    Ok(thermal * (j / (2.0 * j0)).asinh())
}

fn region_term(thickness: f64, porosity: f64, bruggeman: f64) -> f64 {
    thickness / porosity.powf(bruggeman)
}

/// `R_e = (1/κA)·Σ L/ε^b` over negative electrode, separator, positive electrode [Ω].
pub fn electrolyte_resistance_of(d: &CellDesign) -> f64 {
    let sum = region_term(d.negative.thickness, d.negative.porosity, d.negative.bruggeman)
        + region_term(d.separator_thickness, d.separator_porosity, d.separator_bruggeman)
        + region_term(d.positive.thickness, d.positive.porosity, d.positive.bruggeman);
    sum / (d.electrolyte_conductivity * d.electrode_area())
}

pub fn electrolyte_resistance(params: &PhysicalParameterSet) -> Result<f64, ParamError> {
    Ok(electrolyte_resistance_of(&params.resolve()?))
}

fn electrode_capacity_ah(d: &CellDesign, e: &ElectrodeDesign, usable_span: f64) -> f64 {
    FARADAY * e.active_fraction * e.thickness * d.electrode_area() * usable_span * e.max_concentration
        / 3600.0
}

/// Coulomb-counting bound [Ah]: the lithium the negative electrode can give up
/// from its initial state versus the room the positive electrode has left.
pub fn theoretical_capacity_of(d: &CellDesign) -> f64 {
    let neg_span = d.negative.initial_concentration / d.negative.max_concentration;
    let pos_span = 1.0 - d.positive.initial_concentration / d.positive.max_concentration;
    electrode_capacity_ah(d, &d.negative, neg_span).min(electrode_capacity_ah(d, &d.positive, pos_span))
}

pub fn theoretical_capacity(params: &PhysicalParameterSet) -> Result<f64, ParamError> {
    Ok(theoretical_capacity_of(&params.resolve()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::names;

    fn default_params() -> PhysicalParameterSet {
        PhysicalParameterSet::default_set()
    }

    #[test]
    fn exchange_current_vanishes_at_the_bounds() {
        assert_eq!(exchange_current_density(0.0, 100.0, 1000.0, 1e-11).unwrap(), 0.0);
        assert_eq!(exchange_current_density(100.0, 100.0, 1000.0, 1e-11).unwrap(), 0.0);
    }

    #[test]
    fn exchange_current_at_half_fill_with_unit_constants() {
        let c_max = 30_000.0;
        let j0 = exchange_current_density(c_max / 2.0, c_max, 1.0, 1.0).unwrap();
        let expected = FARADAY * (c_max / 2.0);
        assert!((j0 - expected).abs() / expected < 1e-14);
    }

    #[test]
    fn exchange_current_rejects_out_of_range_surface() {
        assert!(matches!(
            exchange_current_density(101.0, 100.0, 1.0, 1.0),
            Err(KineticsError::ConcentrationBound { .. })
        ));
        assert!(exchange_current_density(-1e-9, 100.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn overpotential_is_odd_and_zero_at_zero() {
        assert_eq!(butler_volmer_overpotential(0.0, 2.0, 298.15).unwrap(), 0.0);
        for j in [1e-3, 0.5, 3.0, 40.0, 1e4] {
            let a = butler_volmer_overpotential(j, 2.0, 298.15).unwrap();
            let b = butler_volmer_overpotential(-j, 2.0, 298.15).unwrap();
            assert_eq!(a, -b);
        }
    }

    #[test]
    fn overpotential_large_current_asymptote() {
        let t = 298.15;
        let j0 = 1.5;
        let j = 1e4 * j0;
        let eta = butler_volmer_overpotential(j, j0, t).unwrap();
        let asym = 2.0 * GAS_CONSTANT * t / FARADAY * (j / j0).ln();
        assert!((eta - asym).abs() / asym < 0.01);
    }

    #[test]
    fn overpotential_requires_positive_exchange_current() {
        assert!(butler_volmer_overpotential(1.0, 0.0, 298.15).is_err());
        assert!(butler_volmer_overpotential(1.0, -1.0, 298.15).is_err());
    }

    #[test]
    fn resistance_with_unit_porosity_is_plain_length_sum() {
        let mut d = default_params().resolve().unwrap();
        d.negative.porosity = 1.0;
        d.positive.porosity = 1.0;
        d.separator_porosity = 1.0;
        let expected = (d.negative.thickness + d.separator_thickness + d.positive.thickness)
            / (d.electrolyte_conductivity * d.electrode_area());
        assert_eq!(electrolyte_resistance_of(&d), expected);
    }

    #[test]
    fn raising_bruggeman_scales_the_region_term_by_porosity_power() {
        let mut d = default_params().resolve().unwrap();
        d.negative.porosity = 0.3;
        d.negative.bruggeman = 1.5;
        let t1 = region_term(d.negative.thickness, 0.3, 1.5);
        let t2 = region_term(d.negative.thickness, 0.3, 2.5);
        assert!((t2 / t1 - 1.0 / 0.3).abs() < 1e-12);
    }

    #[test]
    fn resistance_monotonicity() {
        let base = default_params().resolve().unwrap();
        let r0 = electrolyte_resistance_of(&base);
        let mut d = base;
        d.separator_thickness *= 1.1;
        assert!(electrolyte_resistance_of(&d) > r0);
        let mut d = base;
        d.positive.porosity += 0.01;
        assert!(electrolyte_resistance_of(&d) < r0);
        let mut d = base;
        d.negative.bruggeman += 0.2;
        assert!(electrolyte_resistance_of(&d) > r0);
    }

    #[test]
    fn default_resistance_matches_hand_evaluation() {
        // (85.2e-6/0.25^1.5 + 12e-6/0.47^1.5 + 75.6e-6/0.335^1.5) / (0.95 * 1.0 * 0.065),
        // evaluated independently with python3.
        let r = electrolyte_resistance(&default_params()).unwrap();
        assert!((r - 0.017_955_357_688_641_378).abs() < 1e-15, "{r}");
    }

    #[test]
    fn capacity_zero_active_material_gives_zero() {
        let mut d = default_params().resolve().unwrap();
        d.positive.active_fraction = 0.0;
        assert_eq!(theoretical_capacity_of(&d), 0.0);
        let mut d = default_params().resolve().unwrap();
        d.negative.active_fraction = 0.0;
        assert_eq!(theoretical_capacity_of(&d), 0.0);
    }

    #[test]
    fn capacity_is_linear_in_electrode_width() {
        let mut p = default_params();
        let q1 = theoretical_capacity(&p).unwrap();
        let w = p.get(names::ELECTRODE_WIDTH).unwrap();
        p.set(names::ELECTRODE_WIDTH, 2.0 * w).unwrap();
        let q2 = theoretical_capacity(&p).unwrap();
        assert!((q2 / q1 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn default_capacity_matches_hand_evaluation() {
        // negative-limited: F·0.65·85.2e-6·(1.0·0.065)·(29866/33133)·33133/3600
        let q = theoretical_capacity(&default_params()).unwrap();
        assert!((q - 2.881_390_793_185_162).abs() < 1e-12, "{q}");
    }

    #[test]
    fn capacity_rejects_invalid_sets() {
        let mut p = default_params();
        p.set(names::NEG_POROSITY, 0.0).unwrap();
        assert!(theoretical_capacity(&p).is_err());
    }
}
