//! Error metrics shared by feedback and evaluation.

use thiserror::Error;

/// Samples whose target magnitude is below this fraction of the channel's
/// largest target magnitude are left out of MAPE.
pub const MAPE_MASK_FRACTION: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("series lengths differ: sim {sim}, obs {obs}")]
    LengthMismatch { sim: usize, obs: usize },
    #[error("series are empty")]
    Empty,
}

fn check(sim: &[f64], obs: &[f64]) -> Result<(), MetricError> {
    if sim.len() != obs.len() {
        return Err(MetricError::LengthMismatch { sim: sim.len(), obs: obs.len() });
    }
    if obs.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Mean absolute percentage error [%] over unmasked samples; `None` when every
/// sample is masked.
pub fn mape(sim: &[f64], obs: &[f64]) -> Result<Option<f64>, MetricError> {
    check(sim, obs)?;
    let peak = obs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = MAPE_MASK_FRACTION * peak;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (s, o) in sim.iter().zip(obs) {
        if o.abs() > floor {
            sum += ((s - o) / o).abs();
            count += 1;
        }
    }
    Ok((count > 0).then(|| 100.0 * sum / count as f64))
}

pub fn rmse(sim: &[f64], obs: &[f64]) -> Result<f64, MetricError> {
    check(sim, obs)?;
    let ss: f64 = sim.iter().zip(obs).map(|(s, o)| (s - o) * (s - o)).sum();
    Ok((ss / obs.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_series_score_zero() {
        let a = [3.0, 3.5, 4.0];
        assert_eq!(mape(&a, &a).unwrap(), Some(0.0));
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_fixture() {
        assert_eq!(mape(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), Some(50.0));
        assert_eq!(rmse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5_f64.sqrt());
        let m = mape(&[1.1, 2.2], &[1.0, 2.0]).unwrap().unwrap();
        assert!((m - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_targets_are_masked_from_mape_only() {
        let m = mape(&[0.5, 2.2], &[0.0, 2.0]).unwrap().unwrap();
        assert!((m - 10.0).abs() < 1e-12);
        let r = rmse(&[0.5, 2.2], &[0.0, 2.0]).unwrap();
        assert!((r - ((0.25 + 0.04) / 2.0_f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn all_masked_is_none() {
        assert_eq!(mape(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), None);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(mape(&[1.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch { .. })));
        assert!(matches!(rmse(&[], &[]), Err(MetricError::Empty)));
    }
}
