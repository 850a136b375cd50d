//! Perturbation rules that turn a base parameter set into a hidden target.

use serde::{Deserialize, Serialize};

use crate::params::{names, ParamError, PhysicalParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One parameter, large change.
    Extreme,
    /// Several parameters, moderate changes.
    Regular,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Extreme => "extreme",
            Mode::Regular => "regular",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "value", rename_all = "snake_case")]
pub enum Operation {
    Multiply(f64),
    Add(f64),
    Set(f64),
}

impl Operation {
    pub fn apply(self, base: f64) -> f64 {
        match self {
            Operation::Multiply(f) => base * f,
            Operation::Add(d) => base + d,
            Operation::Set(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub parameter: String,
    #[serde(flatten)]
    pub operation: Operation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRule {
    pub id: String,
    pub mode: Mode,
    pub description: String,
    pub overrides: Vec<Override>,
}

impl PerturbationRule {
    pub fn parameters(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for o in &self.overrides {
            if !out.contains(&o.parameter) {
                out.push(o.parameter.clone());
            }
        }
        out
    }
}

fn slug(name: &str) -> &'static str {
    match name {
        names::NEG_PARTICLE_RADIUS => "neg_radius",
        names::POS_PARTICLE_RADIUS => "pos_radius",
        names::NEG_THICKNESS => "neg_thickness",
        names::POS_THICKNESS => "pos_thickness",
        names::NEG_POROSITY => "neg_porosity",
        names::POS_POROSITY => "pos_porosity",
        names::NEG_BRUGGEMAN => "neg_bruggeman",
        names::POS_BRUGGEMAN => "pos_bruggeman",
        names::SEP_THICKNESS => "sep_thickness",
        _ => "param",
    }
}

fn label(name: &str) -> &str {
    // drop the unit suffix for descriptions
    name.split(" [").next().unwrap_or(name)
}

fn num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

fn single(name: &str, op: Operation) -> PerturbationRule {
    let (s, l) = (slug(name), label(name));
    let (id, description) = match op {
        Operation::Multiply(f) => (format!("{s}_x{}", num(f)), format!("{l} ×{}", num(f))),
        Operation::Add(d) if d >= 0.0 => (format!("{s}_p{}", num(d)), format!("{l} +{}", num(d))),
        Operation::Add(d) => (format!("{s}_m{}", num(-d)), format!("{l} −{}", num(-d))),
        Operation::Set(v) => (format!("{s}_s{}", num(v)), format!("{l} = {}", num(v))),
    };
    PerturbationRule {
        id,
        mode: Mode::Extreme,
        description,
        overrides: vec![Override { parameter: name.to_string(), operation: op }],
    }
}

/// The 20 single-parameter rules.
pub fn extreme_rules() -> Vec<PerturbationRule> {
    use Operation::*;
    let mut out = Vec::new();
    for name in [names::NEG_PARTICLE_RADIUS, names::POS_PARTICLE_RADIUS] {
        out.extend([0.5, 2.0].map(|f| single(name, Multiply(f))));
    }
    for name in [names::NEG_THICKNESS, names::POS_THICKNESS] {
        out.extend([0.75, 1.5].map(|f| single(name, Multiply(f))));
    }
    for name in [names::NEG_POROSITY, names::POS_POROSITY] {
        out.extend([0.05, -0.05].map(|d| single(name, Add(d))));
    }
    out.extend([1.5, 2.0, 2.5].map(|v| single(names::NEG_BRUGGEMAN, Set(v))));
    out.extend([1.3, 1.8, 2.3].map(|v| single(names::POS_BRUGGEMAN, Set(v))));
    out.extend([0.7, 1.3].map(|f| single(names::SEP_THICKNESS, Multiply(f))));
    out
}

fn combo(n: usize, description: &str, overrides: &[(&str, Operation)]) -> PerturbationRule {
    PerturbationRule {
        id: format!("combo{n:02}"),
        mode: Mode::Regular,
        description: description.to_string(),
        overrides: overrides
            .iter()
            .map(|(p, op)| Override { parameter: (*p).to_string(), operation: *op })
            .collect(),
    }
}

/// The 12 multi-parameter combinations.
pub fn regular_combos() -> Vec<PerturbationRule> {
    use names::*;
    use Operation::*;
    vec![
        combo(
            1,
            "Max-power: particle radii ×0.7, electrode thicknesses ×0.85/0.9",
            &[
                (NEG_PARTICLE_RADIUS, Multiply(0.7)),
                (POS_PARTICLE_RADIUS, Multiply(0.7)),
                (NEG_THICKNESS, Multiply(0.85)),
                (POS_THICKNESS, Multiply(0.9)),
            ],
        ),
        combo(
            2,
            "Energy-leaning: electrode thicknesses ×1.10/1.25, porosities −0.02/−0.03",
            &[
                (NEG_THICKNESS, Multiply(1.10)),
                (POS_THICKNESS, Multiply(1.25)),
                (NEG_POROSITY, Add(-0.02)),
                (POS_POROSITY, Add(-0.03)),
            ],
        ),
        combo(
            3,
            "Electrolyte-limited cathode: positive thickness ×1.25, porosity −0.05, Bruggeman 2.0",
            &[(POS_THICKNESS, Multiply(1.25)), (POS_POROSITY, Add(-0.05)), (POS_BRUGGEMAN, Set(2.0))],
        ),
        combo(
            4,
            "Solid-diffusion-limited: particle radii ×1.5",
            &[(NEG_PARTICLE_RADIUS, Multiply(1.5)), (POS_PARTICLE_RADIUS, Multiply(1.5))],
        ),
        combo(
            5,
            "Anode-biased diffusion limit: negative radius ×1.8, negative thickness ×1.15",
            &[(NEG_PARTICLE_RADIUS, Multiply(1.8)), (NEG_THICKNESS, Multiply(1.15))],
        ),
        combo(
            6,
            "Cathode-biased diffusion limit: positive radius ×1.8, positive thickness ×1.15",
            &[(POS_PARTICLE_RADIUS, Multiply(1.8)), (POS_THICKNESS, Multiply(1.15))],
        ),
        combo(
            7,
            "High porosity, low tortuosity: porosities +0.06, Bruggeman 1.5",
            &[
                (NEG_POROSITY, Add(0.06)),
                (POS_POROSITY, Add(0.06)),
                (NEG_BRUGGEMAN, Set(1.5)),
                (POS_BRUGGEMAN, Set(1.5)),
            ],
        ),
        combo(
            8,
            "Low porosity, high tortuosity: porosities −0.06, Bruggeman 2.0",
            &[
                (NEG_POROSITY, Add(-0.06)),
                (POS_POROSITY, Add(-0.06)),
                (NEG_BRUGGEMAN, Set(2.0)),
                (POS_BRUGGEMAN, Set(2.0)),
            ],
        ),
        combo(
            9,
            "Fast anode, slow cathode: negative radius ×0.7, positive radius ×1.4",
            &[(NEG_PARTICLE_RADIUS, Multiply(0.7)), (POS_PARTICLE_RADIUS, Multiply(1.4))],
        ),
        combo(
            10,
            "Slow anode, fast cathode: negative radius ×1.4, positive radius ×0.7",
            &[(NEG_PARTICLE_RADIUS, Multiply(1.4)), (POS_PARTICLE_RADIUS, Multiply(0.7))],
        ),
        combo(
            11,
            "Thin separator, thick electrodes: separator ×0.85, electrode thicknesses ×1.20/1.25",
            &[(SEP_THICKNESS, Multiply(0.85)), (NEG_THICKNESS, Multiply(1.20)), (POS_THICKNESS, Multiply(1.25))],
        ),
        combo(
            12,
            "Thick separator, low porosity: separator ×1.5, porosities −0.04",
            &[(SEP_THICKNESS, Multiply(1.5)), (NEG_POROSITY, Add(-0.04)), (POS_POROSITY, Add(-0.04))],
        ),
    ]
}

pub fn rules_for(mode: Mode) -> Vec<PerturbationRule> {
    match mode {
        Mode::Extreme => extreme_rules(),
        Mode::Regular => regular_combos(),
    }
}

/// Applies every override in order and re-validates the result.
pub fn apply_perturbation(
    base: &PhysicalParameterSet,
    rule: &PerturbationRule,
) -> Result<PhysicalParameterSet, ParamError> {
    let mut out = base.clone();
    for o in &rule.overrides {
        let v = out.get(&o.parameter).map_err(|_| ParamError::Unknown(o.parameter.clone()))?;
        out.set(&o.parameter, o.operation.apply(v))?;
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extreme_rules_are_twenty_single_parameter_rules() {
        let rules = extreme_rules();
        assert_eq!(rules.len(), 20);
        assert!(rules.iter().all(|r| r.overrides.len() == 1 && r.mode == Mode::Extreme));
        let ids: std::collections::BTreeSet<_> = rules.iter().map(|r| r.id.clone()).collect();
        assert_eq!(ids.len(), 20);
        let radius: Vec<_> = rules
            .iter()
            .filter(|r| r.overrides[0].parameter == names::NEG_PARTICLE_RADIUS)
            .map(|r| r.overrides[0].operation)
            .collect();
        assert_eq!(radius, vec![Operation::Multiply(0.5), Operation::Multiply(2.0)]);
        assert!(rules.iter().any(|r| r.description == "Negative particle radius ×2.0"));
    }

    #[test]
    fn regular_combos_match_the_table() {
        let combos = regular_combos();
        assert_eq!(combos.len(), 12);
        assert!(combos.iter().all(|c| c.parameters().len() >= 2));
        let c4 = &combos[3];
        assert_eq!(c4.parameters(), vec![names::NEG_PARTICLE_RADIUS, names::POS_PARTICLE_RADIUS]);
        assert!(c4.overrides.iter().all(|o| o.operation == Operation::Multiply(1.5)));
        let c7 = &combos[6];
        assert!(c7.overrides.iter().any(|o| o.parameter == names::NEG_POROSITY && o.operation == Operation::Add(0.06)));
        assert!(c7.overrides.iter().any(|o| o.parameter == names::POS_BRUGGEMAN && o.operation == Operation::Set(1.5)));
        let c12 = &combos[11];
        assert_eq!(c12.overrides[0].operation, Operation::Multiply(1.5));
        assert_eq!(c12.overrides[1].operation, Operation::Add(-0.04));
    }

    #[test]
    fn empty_rule_is_identity() {
        let base = PhysicalParameterSet::default_set();
        let rule = PerturbationRule { id: "none".into(), mode: Mode::Extreme, description: String::new(), overrides: vec![] };
        assert_eq!(apply_perturbation(&base, &rule).unwrap(), base);
    }

    #[test]
    fn multiply_and_invalid_add() {
        let mut base = PhysicalParameterSet::default_set();
        base.set(names::NEG_PARTICLE_RADIUS, 5e-6).unwrap();
        let r = single(names::NEG_PARTICLE_RADIUS, Operation::Multiply(2.0));
        let out = apply_perturbation(&base, &r).unwrap();
        assert_eq!(out.get(names::NEG_PARTICLE_RADIUS).unwrap(), 1e-5);
        for name in base.parameters.names().filter(|n| *n != names::NEG_PARTICLE_RADIUS) {
            assert_eq!(out.get(name).unwrap(), base.get(name).unwrap());
        }
        base.set(names::NEG_POROSITY, 0.04).unwrap();
        let r = single(names::NEG_POROSITY, Operation::Add(-0.05));
        assert!(apply_perturbation(&base, &r).is_err());
    }

    #[test]
    fn rules_round_trip_through_json() {
        let rules = regular_combos();
        let json = serde_json::to_string(&rules).unwrap();
        let back: Vec<PerturbationRule> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rules);
    }
}
