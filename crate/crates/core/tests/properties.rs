use mather_ep::ep_solver::{apply_g, apply_gbar, log_theta_integral, solve_pair, SolverConfig};
use mather_ep::grid::{log_sum_exp, pairwise_sum, Grids, ScalarField, TorusGrid, VelocityGrid};
use mather_ep::io::{field_from_bytes, field_to_bytes, fmt_f64, parse_f64};
use mather_ep::ldp::{measure_of_box, PhaseBox, PhaseSet};
use mather_ep::limits::fit_epsilon_model;
use mather_ep::measure::build_density;
use mather_ep::problem::LagrangianSpec;
use proptest::prelude::*;

fn field(m: usize) -> impl Strategy<Value = ScalarField> {
    prop::collection::vec(-2.0f64..2.0, m).prop_map(move |v| ScalarField::new(TorusGrid::new(1, m).unwrap(), v).unwrap())
}

fn small_grids() -> Grids {
    Grids::new(TorusGrid::new(1, 16).unwrap(), VelocityGrid::new(1, 4.0, 65).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn interp_is_periodic_and_within_range(f in field(16), x in -3.0f64..3.0) {
        let a = f.interp(&[x]);
        let b = f.interp(&[x + 1.0]);
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a <= f.max() + 1e-12 && a >= f.min() - 1e-12);
    }

    #[test]
    fn interp_is_exact_at_nodes(f in field(16), i in 0usize..16) {
        prop_assert_eq!(f.interp(&f.grid().point(i)), f.values()[i]);
    }

    #[test]
    fn log_sum_exp_is_shift_equivariant(terms in prop::collection::vec(-50.0f64..50.0, 1..40), c in -500.0f64..500.0) {
        let shifted: Vec<f64> = terms.iter().map(|t| t + c).collect();
        prop_assert!((log_sum_exp(&shifted) - log_sum_exp(&terms) - c).abs() < 1e-9);
        let naive = terms.iter().map(|t| t.exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(&terms) - naive).abs() < 1e-9 * naive.abs().max(1.0));
    }

    #[test]
    fn pairwise_sum_matches_sequential(values in prop::collection::vec(-1e3f64..1e3, 0..200)) {
        let s: f64 = values.iter().sum();
        prop_assert!((pairwise_sum(&values) - s).abs() < 1e-9);
    }

    #[test]
    fn float_text_round_trips(x in any::<f64>()) {
        let back = parse_f64(&fmt_f64(x)).unwrap();
        prop_assert!(back == x || (x.is_nan() && back.is_nan()));
    }

    #[test]
    fn field_dump_round_trips(f in field(23)) {
        prop_assert_eq!(field_from_bytes(&field_to_bytes(&f)).unwrap(), f);
    }

    #[test]
    fn soft_operators_commute_with_constants(f in field(16), c in -20.0f64..20.0, eps in 0.02f64..0.2) {
        let grids = small_grids();
        let spec = LagrangianSpec::pendulum();
        for op in [apply_g, apply_gbar] {
            let a = op(&spec, eps, 0.2, &f.shifted(c), &grids).unwrap();
            let b = op(&spec, eps, 0.2, &f, &grids).unwrap().shifted(c);
            prop_assert!(a.sup_distance(&b) <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn soft_operator_is_monotone_and_nonexpansive(
        f in field(16),
        g in field(16),
        bump in prop::collection::vec(0.0f64..1.0, 16),
    ) {
        let grids = small_grids();
        let spec = LagrangianSpec::pendulum();
        let (eps, h) = (0.1, 0.2);
        let gf = apply_g(&spec, eps, h, &f, &grids).unwrap();
        let gg = apply_g(&spec, eps, h, &g, &grids).unwrap();
        prop_assert!(gf.sup_distance(&gg) <= f.sup_distance(&g) + 1e-12);
        let above: Vec<f64> = f.values().iter().zip(&bump).map(|(a, b)| a + b).collect();
        let ga = apply_g(&spec, eps, h, &ScalarField::new(*f.grid(), above).unwrap(), &grids).unwrap();
        prop_assert!(ga.values().iter().zip(gf.values()).all(|(a, b)| *a >= b - 1e-12));
    }

    #[test]
    fn fit_recovers_exact_model(limit in -2.0f64..2.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let eps = [0.1, 0.05, 0.02, 0.01];
        let ys: Vec<f64> = eps.iter().map(|&e: &f64| limit + a * e * (1.0 / e).ln() + b * e).collect();
        let fit = fit_epsilon_model(&eps, &ys, 4).unwrap();
        prop_assert!((fit.limit - limit).abs() < 1e-9);
        prop_assert!((fit.a - a).abs() < 1e-7 && (fit.b - b).abs() < 1e-7);
    }

    #[test]
    fn box_masses_split_additively(cut in 0.05f64..0.95, vcut in -3.0f64..3.0) {
        let grids = small_grids();
        let spec = LagrangianSpec::pendulum();
        let sol = solve_pair(&spec, 0.1, 0.2, &grids, &SolverConfig { lambda_tolerance: 1e-2, ..SolverConfig::default() }).unwrap();
        let mu = build_density(&sol, &spec, &grids).unwrap();
        let mass = |x: (f64, f64), v: (f64, f64)| {
            measure_of_box(&mu, &PhaseSet::from(PhaseBox::new(vec![x], vec![v], false).unwrap())).unwrap()
        };
        let whole = mass((0.0, 1.0), (-4.0, 4.0));
        let parts = mass((0.0, cut), (-4.0, vcut)) + mass((cut, 1.0), (-4.0, vcut))
            + mass((0.0, cut), (vcut, 4.0)) + mass((cut, 1.0), (vcut, 4.0));
        prop_assert!((whole - 1.0).abs() < 1e-9);
        prop_assert!((parts - whole).abs() < 1e-9);
    }
}

#[test]
fn aligned_grids_make_forward_and_backward_constants_agree() {
    let h = 0.2;
    let torus = TorusGrid::new(1, 64).unwrap();
    let grids = Grids::new(torus, VelocityGrid::node_aligned(1, &torus, h, 1, 4.0).unwrap()).unwrap();
    for spec in [LagrangianSpec::pendulum(), LagrangianSpec::cosine(1, 0.5)] {
        let sol = solve_pair(&spec, 0.05, h, &grids, &SolverConfig::default()).unwrap();
        assert!((sol.lambda - sol.lambda_backward).abs() < 1e-9);
        assert!(log_theta_integral(&sol.phi, &sol.phibar, 0.05, h).abs() < 1e-12);
    }
}
