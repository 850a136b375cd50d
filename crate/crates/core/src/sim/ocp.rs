//! Open-circuit potential curves.
//!
//! Two analytic families are supported: a graphite-like plateau function for
//! the negative electrode and a layered-oxide-like sigmoid blend for the
//! positive one. Every coefficient is required to be nonnegative, which makes
//! both curves nonincreasing in stoichiometry term by term.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::ParamError;

#[derive(Debug, Error, PartialEq)]
#[error("stoichiometry {0} outside [0, 1]")]
pub struct StoichiometryDomainError(pub f64);

/// `amplitude · tanh(steepness · (s − center))`, subtracted from the curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TanhStep {
    pub amplitude: f64,
    pub steepness: f64,
    pub center: f64,
}

impl TanhStep {
    fn eval(&self, s: f64) -> f64 {
        self.amplitude * (self.steepness * (s - self.center)).tanh()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum OcpCurve {
    /// `offset + exp_amplitude·exp(−exp_rate·x) − Σ steps`
    GraphitePlateau {
        offset: f64,
        exp_amplitude: f64,
        exp_rate: f64,
        steps: Vec<TanhStep>,
    },
    /// `offset − slope·y − Σ steps − end_amplitude·exp(end_rate·(y − 1))`
    LayeredOxide {
        offset: f64,
        slope: f64,
        steps: Vec<TanhStep>,
        end_amplitude: f64,
        end_rate: f64,
    },
}

impl OcpCurve {
    /// Potential [V] at stoichiometry `s ∈ [0, 1]`.
    pub fn value(&self, s: f64) -> Result<f64, StoichiometryDomainError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(StoichiometryDomainError(s));
        }
        Ok(self.eval(s))
    }

    /// Unchecked evaluation; callers guarantee the domain.
    pub(crate) fn eval(&self, s: f64) -> f64 {
        match self {
            OcpCurve::GraphitePlateau {
                offset,
                exp_amplitude,
                exp_rate,
                steps,
            } => {
                offset + exp_amplitude * (-exp_rate * s).exp()
                    - steps.iter().map(|t| t.eval(s)).sum::<f64>()
            }
            OcpCurve::LayeredOxide {
                offset,
                slope,
                steps,
                end_amplitude,
                end_rate,
            } => {
                offset
                    - slope * s
                    - steps.iter().map(|t| t.eval(s)).sum::<f64>()
                    - end_amplitude * (end_rate * (s - 1.0)).exp()
            }
        }
    }

    fn coefficients(&self) -> Vec<f64> {
        let mut c = Vec::new();
        let steps = match self {
            OcpCurve::GraphitePlateau {
                exp_amplitude,
                exp_rate,
                steps,
                ..
            } => {
                c.extend([*exp_amplitude, *exp_rate]);
                steps
            }
            OcpCurve::LayeredOxide {
                slope,
                steps,
                end_amplitude,
                end_rate,
                ..
            } => {
                c.extend([*slope, *end_amplitude, *end_rate]);
                steps
            }
        };
        for t in steps {
            c.extend([t.amplitude, t.steepness]);
        }
        c
    }

    pub fn validate(&self, label: &str) -> Result<(), ParamError> {
        let bad = |reason: &str| ParamError::Invalid {
            name: format!("{label} OCP"),
            reason: reason.to_string(),
        };
        if self.coefficients().iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(bad("shape coefficients must be finite and nonnegative"));
        }
        // nonincreasing, so the endpoints bound the whole curve
        let (hi, lo) = (self.eval(0.0), self.eval(1.0));
        if !(0.0..=5.0).contains(&lo) || !(0.0..=5.0).contains(&hi) {
            return Err(bad("curve must stay within [0, 5] V"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpCurves {
    pub negative: OcpCurve,
    pub positive: OcpCurve,
}

impl OcpCurves {
    pub fn validate(&self) -> Result<(), ParamError> {
        self.negative.validate("negative")?;
        self.positive.validate("positive")
    }
}

/// Negative-electrode OCP of the bundled parameter set.
pub fn ocp_negative(stoichiometry: f64) -> Result<f64, StoichiometryDomainError> {
    crate::params::PhysicalParameterSet::default_set()
        .ocp
        .negative
        .value(stoichiometry)
}

/// Positive-electrode OCP of the bundled parameter set.
pub fn ocp_positive(stoichiometry: f64) -> Result<f64, StoichiometryDomainError> {
    crate::params::PhysicalParameterSet::default_set()
        .ocp
        .positive
        .value(stoichiometry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::PhysicalParameterSet;

    fn curves() -> OcpCurves {
        PhysicalParameterSet::default_set().ocp
    }

    // Independent evaluation of the bundled coefficients (written out by hand
    // from assets/default_cell.json, not through OcpCurve::eval).
    fn neg_reference(x: f64) -> f64 {
        0.2482 + 1.9793 * (-39.3631 * x).exp()
            - 0.0909 * (29.8538 * (x - 0.1234)).tanh()
            - 0.04478 * (14.9159 * (x - 0.2769)).tanh()
            - 0.0205 * (30.4444 * (x - 0.6103)).tanh()
    }

    fn pos_reference(y: f64) -> f64 {
        4.45 - 0.85 * y - 0.08 * (10.0 * (y - 0.45)).tanh() - 0.5 * (20.0 * (y - 1.0)).exp()
    }

    #[test]
    fn endpoints_match_the_shipped_analytic_form() {
        let c = curves();
        for s in [0.0, 1.0] {
            assert!((c.negative.value(s).unwrap() - neg_reference(s)).abs() < 1e-14);
            assert!((c.positive.value(s).unwrap() - pos_reference(s)).abs() < 1e-14);
        }
    }

    #[test]
    fn midpoint_matches_independent_evaluation() {
        let c = curves();
        // frozen from the reference expressions above
        assert!((c.negative.value(0.5).unwrap() - 0.133_085_512_859_335_2).abs() < 1e-12);
        assert!((c.positive.value(0.5).unwrap() - 3.988_007_927_454_318_3).abs() < 1e-12);
        assert!((neg_reference(0.5) - 0.133_085_512_859_335_2).abs() < 1e-12);
        assert!((pos_reference(0.5) - 3.988_007_927_454_318_3).abs() < 1e-12);
    }

    #[test]
    fn curves_are_nonincreasing_and_bounded() {
        let c = curves();
        for curve in [&c.negative, &c.positive] {
            let vals: Vec<f64> = (0..1000)
                .map(|i| curve.value(i as f64 / 999.0).unwrap())
                .collect();
            assert!(vals.windows(2).all(|w| w[1] - w[0] <= 0.0));
            assert!(vals.iter().all(|v| (0.0..=5.0).contains(v)));
        }
    }

    #[test]
    fn out_of_domain_is_an_error() {
        assert_eq!(ocp_negative(-0.1), Err(StoichiometryDomainError(-0.1)));
        assert!(ocp_positive(1.0001).is_err());
    }

    #[test]
    fn negative_coefficients_are_rejected() {
        let mut c = curves();
        if let OcpCurve::LayeredOxide { slope, .. } = &mut c.positive {
            *slope = -0.1;
        }
        assert!(c.validate().is_err());
    }
}
