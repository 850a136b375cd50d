//! Named, unit-annotated parameter sets with bounds.
//!
//! Two sets exist: the cell design ([`PhysicalParameterSet`]) and the SEI
//! side-reaction model ([`DegradationParameterSet`]). Both serialize to a
//! human-editable JSON file where every entry is
//! `name -> {value, unit, lower, upper}`. The simulator never reads the maps
//! directly; it works on the typed views returned by `resolve()`, which is
//! also where the physical invariants are enforced.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::ocp::OcpCurves;

/// Canonical parameter names.
pub mod names {
    pub const NEG_PARTICLE_RADIUS: &str = "Negative particle radius [m]";
    pub const POS_PARTICLE_RADIUS: &str = "Positive particle radius [m]";
    pub const NEG_THICKNESS: &str = "Negative electrode thickness [m]";
    pub const POS_THICKNESS: &str = "Positive electrode thickness [m]";
    pub const SEP_THICKNESS: &str = "Separator thickness [m]";
    pub const NEG_POROSITY: &str = "Negative electrode porosity";
    pub const POS_POROSITY: &str = "Positive electrode porosity";
    pub const SEP_POROSITY: &str = "Separator porosity";
    pub const NEG_BRUGGEMAN: &str = "Negative electrode Bruggeman coefficient";
    pub const POS_BRUGGEMAN: &str = "Positive electrode Bruggeman coefficient";
    pub const SEP_BRUGGEMAN: &str = "Separator Bruggeman coefficient";
    pub const ELECTRODE_WIDTH: &str = "Electrode width [m]";
    pub const ELECTRODE_HEIGHT: &str = "Electrode height [m]";
    pub const NEG_ACTIVE_FRACTION: &str = "Negative electrode active material volume fraction";
    pub const POS_ACTIVE_FRACTION: &str = "Positive electrode active material volume fraction";
    pub const NEG_MAX_CONC: &str = "Maximum concentration in negative electrode [mol.m-3]";
    pub const POS_MAX_CONC: &str = "Maximum concentration in positive electrode [mol.m-3]";
    pub const NEG_INIT_CONC: &str = "Initial concentration in negative electrode [mol.m-3]";
    pub const POS_INIT_CONC: &str = "Initial concentration in positive electrode [mol.m-3]";
    pub const NEG_REACTION_RATE: &str = "Negative electrode reaction rate [s^-1]";
    pub const POS_REACTION_RATE: &str = "Positive electrode reaction rate [s^-1]";
    pub const NEG_DIFFUSIVITY: &str = "Negative particle diffusivity [m2.s-1]";
    pub const POS_DIFFUSIVITY: &str = "Positive particle diffusivity [m2.s-1]";
    pub const ELECTROLYTE_CONDUCTIVITY: &str = "Electrolyte conductivity [S.m-1]";
    pub const ELECTROLYTE_CONC: &str = "Initial concentration in electrolyte [mol.m-3]";
    pub const TEMPERATURE: &str = "Temperature [K]";
    pub const LOWER_CUTOFF: &str = "Lower voltage cut-off [V]";
    pub const UPPER_CUTOFF: &str = "Upper voltage cut-off [V]";
    pub const NOMINAL_CAPACITY: &str = "Nominal cell capacity [A.h]";

    pub const SEI_RATE: &str = "SEI kinetic rate constant [m.s-1]";
    pub const SEI_BULK_SOLVENT: &str = "Bulk solvent concentration [mol.m-3]";
    pub const SEI_EC_INITIAL: &str = "EC initial concentration in electrolyte [mol.m-3]";
    pub const SEI_SOLVENT_DIFFUSIVITY: &str = "SEI solvent diffusivity [m2.s-1]";
    pub const SEI_EC_DIFFUSIVITY: &str = "EC diffusivity [m2.s-1]";
    pub const SEI_INITIAL_THICKNESS: &str = "Initial SEI thickness [m]";
    pub const SEI_PARTIAL_MOLAR_VOLUME: &str = "SEI partial molar volume [m3.mol-1]";
    pub const SEI_LITHIUM_RATIO: &str = "Ratio of lithium moles to SEI moles";
    pub const SEI_CONDUCTIVITY: &str = "SEI ionic conductivity [S.m-1]";

    pub const PHYSICAL: &[&str] = &[
        NEG_PARTICLE_RADIUS,
        POS_PARTICLE_RADIUS,
        NEG_THICKNESS,
        POS_THICKNESS,
        SEP_THICKNESS,
        NEG_POROSITY,
        POS_POROSITY,
        SEP_POROSITY,
        NEG_BRUGGEMAN,
        POS_BRUGGEMAN,
        SEP_BRUGGEMAN,
        ELECTRODE_WIDTH,
        ELECTRODE_HEIGHT,
        NEG_ACTIVE_FRACTION,
        POS_ACTIVE_FRACTION,
        NEG_MAX_CONC,
        POS_MAX_CONC,
        NEG_INIT_CONC,
        POS_INIT_CONC,
        NEG_REACTION_RATE,
        POS_REACTION_RATE,
        NEG_DIFFUSIVITY,
        POS_DIFFUSIVITY,
        ELECTROLYTE_CONDUCTIVITY,
        ELECTROLYTE_CONC,
        TEMPERATURE,
        LOWER_CUTOFF,
        UPPER_CUTOFF,
        NOMINAL_CAPACITY,
    ];

    pub const DEGRADATION: &[&str] = &[
        SEI_RATE,
        SEI_BULK_SOLVENT,
        SEI_EC_INITIAL,
        SEI_SOLVENT_DIFFUSIVITY,
        SEI_EC_DIFFUSIVITY,
        SEI_INITIAL_THICKNESS,
        SEI_PARTIAL_MOLAR_VOLUME,
        SEI_LITHIUM_RATIO,
        SEI_CONDUCTIVITY,
    ];

    /// The nine parameters perturbed by the single-parameter benchmark.
    pub const BENCHMARK_KEYS: &[&str] = &[
        NEG_PARTICLE_RADIUS,
        POS_PARTICLE_RADIUS,
        NEG_THICKNESS,
        POS_THICKNESS,
        NEG_POROSITY,
        POS_POROSITY,
        NEG_BRUGGEMAN,
        POS_BRUGGEMAN,
        SEP_THICKNESS,
    ];
}

const DEFAULT_CELL_JSON: &str = include_str!("../assets/default_cell.json");
const DEFAULT_DEGRADATION_JSON: &str = include_str!("../assets/default_degradation.json");

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("missing parameter `{0}`")]
    Missing(String),
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("`{name}` = {value} outside bounds [{lower}, {upper}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("`{name}` invalid: {reason}")]
    Invalid { name: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

impl ParamError {
    fn invalid(name: &str, reason: impl Into<String>) -> Self {
        ParamError::Invalid {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub value: f64,
    pub unit: String,
    pub lower: f64,
    pub upper: f64,
}

impl Parameter {
    pub fn new(value: f64, unit: &str, lower: f64, upper: f64) -> Self {
        Self {
            value,
            unit: unit.to_string(),
            lower,
            upper,
        }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.max(self.lower).min(self.upper)
    }
}

/// Ordered name -> parameter map.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterMap(BTreeMap<String, Parameter>);

impl ParameterMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, p: Parameter) {
        self.0.insert(name.to_string(), p);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn entry(&self, name: &str) -> Option<&Parameter> {
        self.0.get(name)
    }

    pub fn get(&self, name: &str) -> Result<f64, ParamError> {
        self.0
            .get(name)
            .map(|p| p.value)
            .ok_or_else(|| ParamError::Missing(name.to_string()))
    }

    /// Sets a value without bounds checking; callers re-validate.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ParamError> {
        match self.0.get_mut(name) {
            Some(p) => {
                p.value = value;
                Ok(())
            }
            None => Err(ParamError::Unknown(name.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter)> {
        self.0.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> BTreeMap<String, f64> {
        self.0.iter().map(|(k, p)| (k.clone(), p.value)).collect()
    }

    fn check_bounds(&self) -> Result<(), ParamError> {
        for (name, p) in &self.0 {
            if !p.value.is_finite() {
                return Err(ParamError::invalid(name, "value is not finite"));
            }
            if p.lower > p.upper {
                return Err(ParamError::invalid(name, "lower bound exceeds upper bound"));
            }
            if p.value < p.lower || p.value > p.upper {
                return Err(ParamError::OutOfBounds {
                    name: name.clone(),
                    value: p.value,
                    lower: p.lower,
                    upper: p.upper,
                });
            }
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<String, ParamError> {
    fs::read_to_string(path).map_err(|source| ParamError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), ParamError> {
    fs::write(path, text).map_err(|source| ParamError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// The electrochemical cell design, θ of the inverse problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParameterSet {
    pub name: String,
    pub parameters: ParameterMap,
    pub ocp: OcpCurves,
}

/// Typed, validated view of a [`PhysicalParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellDesign {
    pub negative: ElectrodeDesign,
    pub positive: ElectrodeDesign,
    pub separator_thickness: f64,
    pub separator_porosity: f64,
    pub separator_bruggeman: f64,
    pub electrode_width: f64,
    pub electrode_height: f64,
    pub electrolyte_conductivity: f64,
    pub electrolyte_concentration: f64,
    pub temperature: f64,
    pub lower_cutoff: f64,
    pub upper_cutoff: f64,
    pub nominal_capacity_ah: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectrodeDesign {
    pub particle_radius: f64,
    pub thickness: f64,
    pub porosity: f64,
    pub bruggeman: f64,
    pub active_fraction: f64,
    pub max_concentration: f64,
    pub initial_concentration: f64,
    pub reaction_rate: f64,
    pub diffusivity: f64,
}

impl ElectrodeDesign {
    /// Interfacial area per unit electrode volume, 3·ε_am/R.
    pub fn specific_area(&self) -> f64 {
        3.0 * self.active_fraction / self.particle_radius
    }
}

impl CellDesign {
    pub fn electrode_area(&self) -> f64 {
        self.electrode_width * self.electrode_height
    }

    /// Total active-particle surface area of an electrode [m²].
    pub fn interfacial_area(&self, e: &ElectrodeDesign) -> f64 {
        e.specific_area() * e.thickness * self.electrode_area()
    }

    /// Total active-material volume of an electrode [m³].
    pub fn solid_volume(&self, e: &ElectrodeDesign) -> f64 {
        e.active_fraction * e.thickness * self.electrode_area()
    }

    /// Current [A] corresponding to 1C.
    pub fn one_c_current(&self) -> f64 {
        self.nominal_capacity_ah
    }
}

impl PhysicalParameterSet {
    pub fn default_set() -> Self {
        serde_json::from_str(DEFAULT_CELL_JSON).expect("bundled cell parameter file is valid JSON")
    }

    pub fn from_json(text: &str) -> Result<Self, ParamError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter set serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ParamError> {
        Self::from_json(&read_file(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamError> {
        write_file(path, &self.to_json())
    }

    pub fn get(&self, name: &str) -> Result<f64, ParamError> {
        self.parameters.get(name)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ParamError> {
        self.parameters.set(name, value)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        self.resolve().map(|_| ())
    }

    /// Checks every invariant and returns the typed design.
    pub fn resolve(&self) -> Result<CellDesign, ParamError> {
        use names::*;
        for name in PHYSICAL {
            if !self.parameters.contains(name) {
                return Err(ParamError::Missing((*name).to_string()));
            }
        }
        self.parameters.check_bounds()?;
        let g = |n: &str| self.parameters.get(n);
        let electrode = |r, l, e, b, am, cm, ci, k, d| -> Result<ElectrodeDesign, ParamError> {
            Ok(ElectrodeDesign {
                particle_radius: g(r)?,
                thickness: g(l)?,
                porosity: g(e)?,
                bruggeman: g(b)?,
                active_fraction: g(am)?,
                max_concentration: g(cm)?,
                initial_concentration: g(ci)?,
                reaction_rate: g(k)?,
                diffusivity: g(d)?,
            })
        };
        let negative = electrode(
            NEG_PARTICLE_RADIUS,
            NEG_THICKNESS,
            NEG_POROSITY,
            NEG_BRUGGEMAN,
            NEG_ACTIVE_FRACTION,
            NEG_MAX_CONC,
            NEG_INIT_CONC,
            NEG_REACTION_RATE,
            NEG_DIFFUSIVITY,
        )?;
        let positive = electrode(
            POS_PARTICLE_RADIUS,
            POS_THICKNESS,
            POS_POROSITY,
            POS_BRUGGEMAN,
            POS_ACTIVE_FRACTION,
            POS_MAX_CONC,
            POS_INIT_CONC,
            POS_REACTION_RATE,
            POS_DIFFUSIVITY,
        )?;
        for (label, e) in [("negative", &negative), ("positive", &positive)] {
            check_electrode(label, e)?;
        }
        let design = CellDesign {
            negative,
            positive,
            separator_thickness: g(SEP_THICKNESS)?,
            separator_porosity: g(SEP_POROSITY)?,
            separator_bruggeman: g(SEP_BRUGGEMAN)?,
            electrode_width: g(ELECTRODE_WIDTH)?,
            electrode_height: g(ELECTRODE_HEIGHT)?,
            electrolyte_conductivity: g(ELECTROLYTE_CONDUCTIVITY)?,
            electrolyte_concentration: g(ELECTROLYTE_CONC)?,
            temperature: g(TEMPERATURE)?,
            lower_cutoff: g(LOWER_CUTOFF)?,
            upper_cutoff: g(UPPER_CUTOFF)?,
            nominal_capacity_ah: g(NOMINAL_CAPACITY)?,
        };
        positive_or(SEP_THICKNESS, design.separator_thickness)?;
        positive_or(ELECTRODE_WIDTH, design.electrode_width)?;
        positive_or(ELECTRODE_HEIGHT, design.electrode_height)?;
        positive_or(ELECTROLYTE_CONDUCTIVITY, design.electrolyte_conductivity)?;
        positive_or(ELECTROLYTE_CONC, design.electrolyte_concentration)?;
        positive_or(TEMPERATURE, design.temperature)?;
        positive_or(NOMINAL_CAPACITY, design.nominal_capacity_ah)?;
        if !(design.separator_porosity > 0.0 && design.separator_porosity <= 1.0) {
            return Err(ParamError::invalid(SEP_POROSITY, "must lie in (0, 1]"));
        }
        if design.separator_bruggeman < 1.0 {
            return Err(ParamError::invalid(SEP_BRUGGEMAN, "must be at least 1"));
        }
        if design.lower_cutoff <= 0.0 || design.lower_cutoff >= design.upper_cutoff {
            return Err(ParamError::invalid(
                LOWER_CUTOFF,
                "voltage window must satisfy 0 < lower < upper",
            ));
        }
        self.ocp.validate()?;
        Ok(design)
    }
}

fn positive_or(name: &str, v: f64) -> Result<(), ParamError> {
    if v > 0.0 {
        Ok(())
    } else {
        Err(ParamError::invalid(name, "must be strictly positive"))
    }
}

fn check_electrode(label: &str, e: &ElectrodeDesign) -> Result<(), ParamError> {
    let name = |what: &str| format!("{label} electrode {what}");
    if e.particle_radius <= 0.0 || e.thickness <= 0.0 {
        return Err(ParamError::invalid(
            &name("geometry"),
            "lengths must be strictly positive",
        ));
    }
    if !(e.porosity > 0.0 && e.porosity < 1.0) {
        return Err(ParamError::invalid(&name("porosity"), "must lie in (0, 1)"));
    }
    if !(e.active_fraction > 0.0 && e.active_fraction < 1.0) {
        return Err(ParamError::invalid(
            &name("active material volume fraction"),
            "must lie in (0, 1)",
        ));
    }
    if e.porosity + e.active_fraction > 1.0 {
        return Err(ParamError::invalid(
            &name("porosity"),
            "porosity plus active material fraction exceeds 1",
        ));
    }
    if e.bruggeman < 1.0 {
        return Err(ParamError::invalid(
            &name("Bruggeman coefficient"),
            "must be at least 1",
        ));
    }
    if e.initial_concentration < 0.0 || e.initial_concentration >= e.max_concentration {
        return Err(ParamError::invalid(
            &name("initial concentration"),
            "must satisfy 0 <= initial < maximum concentration",
        ));
    }
    if e.reaction_rate <= 0.0 || e.diffusivity <= 0.0 {
        return Err(ParamError::invalid(
            &name("kinetics"),
            "reaction rate and diffusivity must be strictly positive",
        ));
    }
    Ok(())
}

/// SEI side-reaction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationParameterSet {
    pub name: String,
    pub parameters: ParameterMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeiDesign {
    pub rate_constant: f64,
    pub bulk_solvent_concentration: f64,
    pub ec_initial_concentration: f64,
    pub solvent_diffusivity: f64,
    pub ec_diffusivity: f64,
    pub initial_thickness: f64,
    pub partial_molar_volume: f64,
    pub lithium_ratio: f64,
    pub conductivity: f64,
}

impl DegradationParameterSet {
    pub fn default_set() -> Self {
        serde_json::from_str(DEFAULT_DEGRADATION_JSON)
            .expect("bundled degradation parameter file is valid JSON")
    }

    pub fn from_json(text: &str) -> Result<Self, ParamError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter set serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ParamError> {
        Self::from_json(&read_file(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamError> {
        write_file(path, &self.to_json())
    }

    pub fn get(&self, name: &str) -> Result<f64, ParamError> {
        self.parameters.get(name)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ParamError> {
        self.parameters.set(name, value)
    }

    pub fn resolve(&self) -> Result<SeiDesign, ParamError> {
        use names::*;
        for name in DEGRADATION {
            if !self.parameters.contains(name) {
                return Err(ParamError::Missing((*name).to_string()));
            }
        }
        self.parameters.check_bounds()?;
        for (name, p) in self.parameters.iter() {
            if p.value < 0.0 {
                return Err(ParamError::invalid(name, "must be nonnegative"));
            }
        }
        let g = |n: &str| self.parameters.get(n);
        let d = SeiDesign {
            rate_constant: g(SEI_RATE)?,
            bulk_solvent_concentration: g(SEI_BULK_SOLVENT)?,
            ec_initial_concentration: g(SEI_EC_INITIAL)?,
            solvent_diffusivity: g(SEI_SOLVENT_DIFFUSIVITY)?,
            ec_diffusivity: g(SEI_EC_DIFFUSIVITY)?,
            initial_thickness: g(SEI_INITIAL_THICKNESS)?,
            partial_molar_volume: g(SEI_PARTIAL_MOLAR_VOLUME)?,
            lithium_ratio: g(SEI_LITHIUM_RATIO)?,
            conductivity: g(SEI_CONDUCTIVITY)?,
        };
        positive_or(SEI_INITIAL_THICKNESS, d.initial_thickness)?;
        positive_or(SEI_LITHIUM_RATIO, d.lithium_ratio)?;
        positive_or(SEI_CONDUCTIVITY, d.conductivity)?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        self.resolve().map(|_| ())
    }
}

/// The full calibration state: cell design plus optional SEI model.
///
/// Names are looked up in the cell set first, then in the degradation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub cell: PhysicalParameterSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<DegradationParameterSet>,
}

impl ModelParameters {
    pub fn new(cell: PhysicalParameterSet, degradation: Option<DegradationParameterSet>) -> Self {
        Self { cell, degradation }
    }

    pub fn entry(&self, name: &str) -> Option<&Parameter> {
        self.cell.parameters.entry(name).or_else(|| {
            self.degradation
                .as_ref()
                .and_then(|d| d.parameters.entry(name))
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entry(name).is_some()
    }

    pub fn get(&self, name: &str) -> Result<f64, ParamError> {
        self.entry(name)
            .map(|p| p.value)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ParamError> {
        if self.cell.parameters.contains(name) {
            return self.cell.set(name, value);
        }
        match self.degradation.as_mut() {
            Some(d) if d.parameters.contains(name) => d.set(name, value),
            _ => Err(ParamError::Unknown(name.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        self.cell.validate()?;
        if let Some(d) = &self.degradation {
            d.validate()?;
        }
        Ok(())
    }

    /// Flat name -> value map over both sets.
    pub fn values(&self) -> BTreeMap<String, f64> {
        let mut out = self.cell.parameters.values();
        if let Some(d) = &self.degradation {
            out.extend(d.parameters.values());
        }
        out
    }

    /// Copies every value in `values` into the matching entry.
    pub fn assign(&mut self, values: &BTreeMap<String, f64>) -> Result<(), ParamError> {
        for (k, v) in values {
            self.set(k, *v)?;
        }
        Ok(())
    }

    pub fn subset(&self, keys: &[String]) -> Result<BTreeMap<String, f64>, ParamError> {
        keys.iter()
            .map(|k| self.get(k).map(|v| (k.clone(), v)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_sets_validate() {
        PhysicalParameterSet::default_set().validate().unwrap();
        DegradationParameterSet::default_set().validate().unwrap();
    }

    #[test]
    fn bundled_values_lie_inside_bounds_with_room_for_benchmark_rules() {
        let p = PhysicalParameterSet::default_set();
        for name in names::BENCHMARK_KEYS {
            let e = p.parameters.entry(name).unwrap();
            assert!(e.lower < e.value && e.value < e.upper, "{name}");
        }
    }

    #[test]
    fn initial_above_maximum_is_rejected() {
        let mut p = PhysicalParameterSet::default_set();
        let cmax = p.get(names::NEG_MAX_CONC).unwrap();
        p.parameters
            .0
            .get_mut(names::NEG_INIT_CONC)
            .unwrap()
            .upper = 2.0 * cmax;
        p.set(names::NEG_INIT_CONC, 1.1 * cmax).unwrap();
        assert!(matches!(p.validate(), Err(ParamError::Invalid { .. })));
    }

    #[test]
    fn porosity_plus_active_fraction_above_one_is_rejected() {
        let mut p = PhysicalParameterSet::default_set();
        let am = p.get(names::NEG_ACTIVE_FRACTION).unwrap();
        p.set(names::NEG_POROSITY, 1.0 - am + 0.01).unwrap();
        let err = p.validate().unwrap_err();
        assert!(err.to_string().contains("exceeds 1"), "{err}");
    }

    #[test]
    fn out_of_bounds_is_reported_with_name() {
        let mut p = PhysicalParameterSet::default_set();
        p.set(names::ELECTRODE_WIDTH, 1e3).unwrap();
        match p.validate() {
            Err(ParamError::OutOfBounds { name, .. }) => assert_eq!(name, names::ELECTRODE_WIDTH),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cell.json");
        let p = PhysicalParameterSet::default_set();
        p.save(&path).unwrap();
        assert_eq!(PhysicalParameterSet::load(&path).unwrap(), p);
    }

    #[test]
    fn model_parameters_route_names_to_the_right_set() {
        let mut m = ModelParameters::new(
            PhysicalParameterSet::default_set(),
            Some(DegradationParameterSet::default_set()),
        );
        m.set(names::SEI_RATE, 2e-12).unwrap();
        assert_eq!(m.get(names::SEI_RATE).unwrap(), 2e-12);
        assert!(matches!(m.set("nope", 1.0), Err(ParamError::Unknown(_))));
        assert_eq!(m.values().len(), names::PHYSICAL.len() + names::DEGRADATION.len());
    }
}
