//! Discretized cell state carried between time steps and cycles.

use serde::{Deserialize, Serialize};

use crate::params::{CellDesign, SeiDesign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    /// Shell-averaged concentrations, centre outwards [mol·m⁻³].
    pub negative: Vec<f64>,
    pub positive: Vec<f64>,
    pub sei_thickness: f64,
    /// Lithium consumed by the side reaction [mol].
    pub inventory_loss_mol: f64,
    pub time_s: f64,
}

/// Volume weights of equal-thickness shells, summing to one.
pub(crate) fn shell_weights(n: usize) -> Vec<f64> {
    let n3 = (n * n * n) as f64;
    (0..n)
        .map(|i| {
            let a = i as f64;
            let b = a + 1.0;
            (b * b * b - a * a * a) / n3
        })
        .collect()
}

pub(crate) fn mean_concentration(profile: &[f64]) -> f64 {
    shell_weights(profile.len()).iter().zip(profile).map(|(w, c)| w * c).sum()
}

impl CellState {
    /// Uniform particles at the design's initial concentrations, with
    /// `inventory_loss_mol` already removed from the negative electrode.
    pub fn initial(design: &CellDesign, sei: Option<&SeiDesign>, shells: usize, inventory_loss_mol: f64) -> Self {
        let neg_volume = design.solid_volume(&design.negative);
        let c_neg = design.negative.initial_concentration - inventory_loss_mol / neg_volume;
        Self {
            negative: vec![c_neg; shells],
            positive: vec![design.positive.initial_concentration; shells],
            sei_thickness: sei.map_or(0.0, |s| s.initial_thickness),
            inventory_loss_mol,
            time_s: 0.0,
        }
    }

    /// Total cyclable lithium held in both electrodes [mol].
    pub fn lithium_moles(&self, design: &CellDesign) -> f64 {
        mean_concentration(&self.negative) * design.solid_volume(&design.negative)
            + mean_concentration(&self.positive) * design.solid_volume(&design.positive)
    }

    pub fn validate(&self, design: &CellDesign) -> Result<(), String> {
        if self.negative.len() < 3 || self.positive.len() < 3 {
            return Err("each particle needs at least 3 shells".into());
        }
        let check = |profile: &[f64], c_max: f64, label: &str| {
            if profile.iter().any(|&c| !(0.0..=c_max).contains(&c)) {
                Err(format!("{label} concentration outside [0, {c_max}]"))
            } else {
                Ok(())
            }
        };
        check(&self.negative, design.negative.max_concentration, "negative")?;
        check(&self.positive, design.positive.max_concentration, "positive")?;
        if !(self.sei_thickness >= 0.0) {
            return Err(format!("SEI thickness must be nonnegative, got {}", self.sei_thickness));
        }
        if !(self.inventory_loss_mol >= 0.0) {
            return Err(format!("inventory loss must be nonnegative, got {}", self.inventory_loss_mol));
        }
        Ok(())
    }
}
