use cellfit::params::{names, DegradationParameterSet, PhysicalParameterSet};
use cellfit::sim::state::CellState;
use cellfit::sim::{
    cell_voltage, run_cycles, run_protocol, run_protocol_with, Direction, Protocol, SimError, SimOptions, Step,
    StepKind, TerminationEvent,
};

fn cell() -> PhysicalParameterSet {
    PhysicalParameterSet::default_set()
}

fn discharge_only(c_rate: f64) -> Protocol {
    let mut p = Protocol::cccv(c_rate, 2.5, 4.2);
    p.steps.truncate(1);
    p
}

#[test]
fn one_c_discharge_duration_matches_coulomb_count() {
    let p = cell();
    let t = run_protocol(&p, &discharge_only(1.0), None, None).unwrap();
    assert_eq!(t.event, TerminationEvent::VoltageCutoff);
    let nominal = p.get(names::NOMINAL_CAPACITY).unwrap();
    let expected = 3600.0 * t.discharge_capacity_ah / nominal;
    let duration = t.step_durations[0];
    assert!((duration - expected).abs() / expected < 0.02, "{duration} vs {expected}");
    assert!((3000.0..=3600.0).contains(&duration), "1C discharge took {duration} s");
}

#[test]
fn cv_phase_holds_voltage_and_tapers() {
    let p = cell();
    let proto = Protocol::cccv(1.0, 2.5, 4.2);
    let t = run_protocol(&p, &proto, None, None).unwrap();
    assert_eq!(t.event, TerminationEvent::CurrentCutoff);
    let cv = t.step_range(3).unwrap();
    assert!(cv.len() > 10);
    for i in cv.clone() {
        assert!((t.voltage[i] - 4.2).abs() <= 1e-4, "sample {i}: {}", t.voltage[i]);
    }
    let currents: Vec<f64> = cv.map(|i| t.current[i].abs()).collect();
    for w in currents[5..].windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} then {}", w[0], w[1]);
    }
    assert!(*currents.last().unwrap() < 0.05 * p.get(names::NOMINAL_CAPACITY).unwrap());
}

#[test]
fn zero_porosity_is_rejected_before_integration() {
    let mut p = cell();
    p.set(names::NEG_POROSITY, 0.0).unwrap();
    let err = run_protocol(&p, &Protocol::cccv(1.0, 2.5, 4.2), None, None).unwrap_err();
    assert!(matches!(err, SimError::Params(_)), "{err}");
}

#[test]
fn invalid_protocol_is_rejected() {
    let mut proto = Protocol::cccv(1.0, 2.5, 4.2);
    proto.steps[0] = Step::ConstantCurrent { c_rate: -1.0, direction: Direction::Discharge, voltage_cutoff: 2.5 };
    assert!(matches!(run_protocol(&cell(), &proto, None, None), Err(SimError::Protocol(_))));
}

#[test]
fn trace_invariants_hold() {
    let p = cell();
    for c in [0.2, 1.0, 2.0] {
        let t = run_protocol(&p, &Protocol::cccv(c, 2.5, 4.2), None, None).unwrap();
        assert!(t.time.windows(2).all(|w| w[1] > w[0]));
        let mut acc = 0.0;
        for i in 1..t.len() {
            acc += 0.5 * (t.current[i] + t.current[i - 1]) * (t.time[i] - t.time[i - 1]) / 3600.0;
            let scale = acc.abs().max(1e-9);
            assert!((t.capacity[i] - acc).abs() <= 1e-6 * scale);
        }
        assert_eq!(t.step_durations.len(), 4);
        assert_eq!(t.steps_present(), vec![0, 1, 2, 3]);
    }
}

#[test]
fn lithium_is_conserved_without_degradation() {
    let p = cell();
    let d = p.resolve().unwrap();
    let start = CellState::initial(&d, None, 20, 0.0);
    let (_, end) = run_protocol_with(&p, &Protocol::cccv(2.0, 2.5, 4.2), None, None, SimOptions::default()).unwrap();
    let before = start.lithium_moles(&d);
    let after = end.lithium_moles(&d);
    assert!((after - before).abs() <= 1e-6 * before, "{before} -> {after}");
}

#[test]
fn lithium_loss_matches_inventory_with_degradation() {
    let p = cell();
    let deg = DegradationParameterSet::default_set();
    let d = p.resolve().unwrap();
    let s = deg.resolve().unwrap();
    let start = CellState::initial(&d, Some(&s), 20, 0.0);
    let (_, end) =
        run_protocol_with(&p, &Protocol::cccv(1.0, 2.5, 4.2), Some(&deg), None, SimOptions::default()).unwrap();
    let lost = start.lithium_moles(&d) - end.lithium_moles(&d);
    assert!(end.inventory_loss_mol > 0.0);
    assert!((lost - end.inventory_loss_mol).abs() <= 1e-6 * end.inventory_loss_mol, "{lost} vs {}", end.inventory_loss_mol);
    assert!(end.sei_thickness > s.initial_thickness);
}

#[test]
fn identical_inputs_give_bit_identical_traces() {
    let p = cell();
    let deg = DegradationParameterSet::default_set();
    let proto = Protocol::cccv(1.0, 2.5, 4.2);
    let a = run_protocol(&p, &proto, Some(&deg), None).unwrap();
    let b = run_protocol(&p, &proto, Some(&deg), None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv_string(), b.to_csv_string());
}

fn voltage_at(trace_t: &[f64], trace_v: &[f64], t: f64) -> f64 {
    let k = trace_t.partition_point(|&x| x < t).clamp(1, trace_t.len() - 1);
    let (t0, t1) = (trace_t[k - 1], trace_t[k]);
    let w = (t - t0) / (t1 - t0);
    trace_v[k - 1] * (1.0 - w) + trace_v[k] * w
}

#[test]
fn voltage_error_shrinks_as_shells_double() {
    let p = cell();
    let proto = discharge_only(1.0);
    let run = |n: usize| run_protocol_with(&p, &proto, None, None, SimOptions { radial_shells: n }).unwrap().0;
    let reference = run(80);
    let horizon = 3000.0;
    let err = |n: usize| {
        let t = run(n);
        t.time
            .iter()
            .zip(&t.voltage)
            .filter(|(&time, _)| time <= horizon)
            .map(|(&time, &v)| (v - voltage_at(&reference.time, &reference.voltage, time)).abs())
            .fold(0.0, f64::max)
    };
    let errors: Vec<f64> = [5, 10, 20].iter().map(|&n| err(n)).collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

fn low_rate_capacity(p: &PhysicalParameterSet) -> f64 {
    run_protocol(p, &discharge_only(0.2), None, None).unwrap().discharge_capacity_ah
}

#[test]
fn capacity_moves_in_the_expected_direction() {
    let base = cell();
    let q0 = low_rate_capacity(&base);
    let bump = |name: &str, factor: f64| {
        let mut p = base.clone();
        let v = p.get(name).unwrap();
        p.set(name, v * factor).unwrap();
        low_rate_capacity(&p)
    };
    assert!(bump(names::ELECTRODE_WIDTH, 1.05) > q0);
    assert!(bump(names::NEG_ACTIVE_FRACTION, 1.05) > q0);
    assert!(bump(names::NEG_THICKNESS, 1.05) > q0);
    assert!(bump(names::NEG_INIT_CONC, 1.02) > q0);
    assert!(bump(names::POS_INIT_CONC, 1.05) < q0);
}

#[test]
fn cell_voltage_at_rest_is_the_ocv_difference() {
    let p = cell();
    let d = p.resolve().unwrap();
    let mut s = CellState::initial(&d, None, 20, 0.0);
    s.negative = vec![0.5 * d.negative.max_concentration; 20];
    s.positive = vec![0.6 * d.positive.max_concentration; 20];
    let ocv = p.ocp.positive.value(0.6).unwrap() - p.ocp.negative.value(0.5).unwrap();
    assert_eq!(cell_voltage(&s, 0.0, &p, None).unwrap(), ocv);
    let one_c = d.one_c_current();
    assert!(cell_voltage(&s, one_c, &p, None).unwrap() < ocv);
    assert!(cell_voltage(&s, -one_c, &p, None).unwrap() > ocv);
}

#[test]
fn cell_voltage_at_one_c_matches_independent_evaluation() {
    // fixed state: x_neg = 0.5, x_pos = 0.6 uniform, I = 1C discharge;
    // evaluated from the voltage formula with a standalone python script
    let p = cell();
    let d = p.resolve().unwrap();
    let mut s = CellState::initial(&d, None, 20, 0.0);
    s.negative = vec![0.5 * d.negative.max_concentration; 20];
    s.positive = vec![0.6 * d.positive.max_concentration; 20];
    let v = cell_voltage(&s, d.one_c_current(), &p, None).unwrap();
    assert!((v - 3.582_207_150_443_04).abs() < 1e-9, "{v}");
}

#[test]
fn step_kinds_follow_the_protocol() {
    assert_eq!(
        Protocol::cccv(1.0, 2.5, 4.2).kinds(),
        vec![StepKind::CcDischarge, StepKind::Rest, StepKind::CcCharge, StepKind::Cv]
    );
}

#[test]
fn unreachable_cv_hold_is_a_solver_failure() {
    // from the charged state even a 5C discharge stays far above 2.5 V
    let mut proto = Protocol::cccv(1.0, 2.5, 4.2);
    proto.steps = vec![
        Step::Rest { duration_s: 60.0 },
        Step::ConstantVoltage { hold_voltage: 2.5, current_cutoff: 0.05 },
    ];
    let t = run_protocol(&cell(), &proto, None, None).unwrap();
    assert_eq!(t.event, TerminationEvent::SolverFailure);
    assert_eq!(t.event_label(), "solver_failure@step1");
    assert_eq!(t.steps_present(), vec![0]);
    assert_eq!(t.step_durations.len(), 2);
}

#[test]
fn zero_sei_rate_gives_no_fade() {
    let p = cell();
    let mut deg = DegradationParameterSet::default_set();
    deg.set(names::SEI_RATE, 0.0).unwrap();
    let s = run_cycles(&p, Some(&deg), &Protocol::cccv(1.0, 2.5, 4.2), 5).unwrap();
    let caps = s.capacities();
    for c in &caps {
        assert!((c - caps[0]).abs() <= 1e-9 * caps[0]);
    }
    assert_eq!(s.cycles.iter().map(|c| c.cycle).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
}

#[test]
fn positive_sei_rate_fades_monotonically() {
    let p = cell();
    let deg = DegradationParameterSet::default_set();
    let s = run_cycles(&p, Some(&deg), &Protocol::cccv(2.0, 2.5, 4.2), 50).unwrap();
    assert_eq!(s.len(), 50);
    let caps = s.capacities();
    for w in caps.windows(2) {
        assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
    }
    assert!(caps[49] < caps[0]);
}

#[test]
fn zero_cycles_is_an_error() {
    assert!(run_cycles(&cell(), None, &Protocol::cccv(1.0, 2.5, 4.2), 0).is_err());
}
