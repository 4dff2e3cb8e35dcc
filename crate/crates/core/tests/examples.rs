//! Every runnable example is compiled into this test and executed.

macro_rules! example {
    ($name:ident) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));
        }
    };
}

example!(eigen_constant);
example!(measure_diagnostics);
example!(continuation);
example!(hard_bellman);
example!(ldp_boxes);
example!(critical_cycle);
example!(discrete_aubry_mather);
example!(field_io);
example!(probe_problem);
example!(run_config);

#[test]
fn eigen_constant_matches_closed_form() {
    let lambda = eigen_constant::run_example().unwrap();
    let exact = -0.001 * (2.0 * std::f64::consts::PI * 0.01f64).sqrt().ln();
    assert!((lambda - exact).abs() < 1e-6 * exact.abs());
}

#[test]
fn measure_diagnostics_has_unit_mass() {
    let r = measure_diagnostics::run_example().unwrap();
    assert!((r.mass - 1.0).abs() < 1e-6);
    assert!(r.max_holonomy() < 1e-3);
}

#[test]
fn continuation_extrapolates_to_minus_one() {
    let c = continuation::run_example().unwrap();
    assert!((c.limit + 1.0).abs() < 5e-2);
}

#[test]
fn hard_bellman_finds_critical_value() {
    let s = hard_bellman::run_example().unwrap();
    assert!((s.hbar + 1.0).abs() < 1e-9);
}

#[test]
fn ldp_boxes_passes() {
    assert!(ldp_boxes::run_example().unwrap().pass);
}

#[test]
fn critical_cycles() {
    assert_eq!(critical_cycle::run_example().unwrap(), vec![-1.0, 0.0, 0.0]);
}

#[test]
fn discrete_aubry_mather_isolates_the_bottom() {
    assert_eq!(discrete_aubry_mather::run_example().unwrap(), vec![0]);
}

#[test]
fn field_io_round_trips() {
    assert_eq!(field_io::run_example().unwrap(), 4 + 16 + 8 * 32);
}

#[test]
fn probe_problem_reports_velocity_bounds() {
    let reports = probe_problem::run_example().unwrap();
    assert_eq!(reports.len(), 4);
    assert!((reports[1].velocity_bound - 5f64.sqrt()).abs() < 1e-2);
}

#[test]
fn run_config_passes() {
    assert_eq!(run_config::run_example().unwrap(), 0);
}
