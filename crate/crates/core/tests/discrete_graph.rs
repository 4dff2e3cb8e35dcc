use mather_ep::discrete_am::{
    calibrated_from_barrier, calibration_residuals, default_k_max, mane_table, min_mean_cycle, optimal_slots,
    path_action, KPath, ManeMatrix, PathGraph,
};
use mather_ep::grid::TorusGrid;
use mather_ep::problem::{LagrangianSpec, ProbeSamples};
use proptest::prelude::*;

fn lattice_distance(m: usize, a: usize, b: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(m - d)
}

/// On the lattice the cheapest way to move `n` nodes is `n` unit steps, each
/// costing `Δx²/(2h)`.
#[test]
fn quadratic_mane_potential_matches_lattice_formula() {
    let m = 32;
    let h = 0.25;
    let torus = TorusGrid::new(1, m).unwrap();
    let graph = PathGraph::new(&LagrangianSpec::quadratic(1), torus, h, 2.0).unwrap();
    let hbar = min_mean_cycle(&graph).unwrap().hbar;
    assert_eq!(hbar, 0.0);
    let mane = ManeMatrix::build(&graph, hbar).unwrap();
    let dx = torus.spacing();
    for x in 0..m {
        for z in 0..m {
            let expected = lattice_distance(m, x, z) as f64 * dx * dx / (2.0 * h);
            assert!((mane.get(x, z) - expected).abs() < 1e-12, "S({x}, {z}) = {}", mane.get(x, z));
        }
    }
}

#[test]
fn dp_columns_agree_with_floyd_warshall() {
    let torus = TorusGrid::new(1, 32).unwrap();
    let graph = PathGraph::new(&LagrangianSpec::pendulum(), torus, 0.2, 3.0).unwrap();
    let hbar = min_mean_cycle(&graph).unwrap().hbar;
    let mane = ManeMatrix::build(&graph, hbar).unwrap();
    for z in [0, 7, 16, 31] {
        let table = mane_table(&graph, z, hbar, default_k_max(&torus), 64).unwrap();
        for x in 0..torus.len() {
            assert!((table.to_source[x] - mane.get(x, z)).abs() < 1e-12);
            assert!((table.from_source[x] - mane.get(z, x)).abs() < 1e-12);
        }
    }
}

#[test]
fn mane_columns_are_subactions() {
    let torus = TorusGrid::new(1, 32).unwrap();
    let graph = PathGraph::new(&LagrangianSpec::pendulum(), torus, 0.2, 3.0).unwrap();
    let hbar = min_mean_cycle(&graph).unwrap().hbar;
    let mane = ManeMatrix::build(&graph, hbar).unwrap();
    for z in 0..torus.len() {
        let column = mane.column(z);
        let worst = calibration_residuals(&graph, &column, hbar)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!(worst >= -1e-12, "S(., {z}) violates the subaction inequality by {worst}");
    }
}

#[test]
fn calibrated_velocities_respect_the_velocity_bound() {
    let spec = LagrangianSpec::pendulum();
    let bound = spec.probe_hypotheses(&ProbeSamples::default()).unwrap().velocity_bound;
    let torus = TorusGrid::new(1, 64).unwrap();
    let graph = PathGraph::new(&spec, torus, 0.2, 4.0).unwrap();
    let hbar = min_mean_cycle(&graph).unwrap().hbar;
    let k_max = default_k_max(&torus);
    let u = calibrated_from_barrier(&graph, 0, hbar, k_max, k_max / 4, 1e-9).unwrap();
    let dv = torus.spacing() / graph.h();
    for (x, slot) in optimal_slots(&graph, u.values(), hbar).into_iter().enumerate() {
        let v = graph.velocity(slot)[0].abs();
        assert!(v <= bound + dv, "node {x}: |v| = {v} exceeds {bound}");
    }
}

#[test]
fn shifted_quadratic_has_zero_critical_value_on_commensurate_grids() {
    // ω h M = 0.5 · 0.125 · 64 = 4 nodes per step.
    let torus = TorusGrid::new(1, 64).unwrap();
    let graph = PathGraph::new(&LagrangianSpec::shifted_quadratic(vec![0.5]), torus, 0.125, 3.0).unwrap();
    let crit = min_mean_cycle(&graph).unwrap();
    assert_eq!(crit.hbar, 0.0);
    assert!(crit.cycle.steps.iter().all(|j| j == &[4]));
}

fn walk(graph: &PathGraph, start: usize, steps: &[i64]) -> KPath {
    let mut nodes = vec![start];
    for &j in steps {
        let slot = graph.slot_of(&[j]).unwrap();
        nodes.push(graph.target(*nodes.last().unwrap(), slot));
    }
    KPath::new(nodes, steps.iter().map(|&j| vec![j]).collect()).unwrap()
}

fn pendulum_graph() -> (PathGraph, f64, ManeMatrix) {
    let graph = PathGraph::new(&LagrangianSpec::pendulum(), TorusGrid::new(1, 32).unwrap(), 0.2, 3.0).unwrap();
    let hbar = min_mean_cycle(&graph).unwrap().hbar;
    let mane = ManeMatrix::build(&graph, hbar).unwrap();
    (graph, hbar, mane)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn every_path_costs_at_least_the_mane_potential(
        start in 0usize..32,
        steps in prop::collection::vec(-19i64..=19, 1..12),
    ) {
        let (graph, hbar, mane) = pendulum_graph();
        let path = walk(&graph, start, &steps);
        let action = path_action(&graph, &path, hbar).unwrap();
        prop_assert!(action >= mane.get(start, *path.nodes.last().unwrap()) - 1e-12);
    }

    #[test]
    fn one_step_bound(x in 0usize..32, j in -19i64..=19) {
        let (graph, hbar, mane) = pendulum_graph();
        let slot = graph.slot_of(&[j]).unwrap();
        prop_assert!(mane.get(x, graph.target(x, slot)) <= graph.weight(x, slot, hbar) + 1e-12);
    }

    #[test]
    fn velocity_only_actions_are_translation_invariant(
        start in 0usize..32,
        offset in -40i64..40,
        steps in prop::collection::vec(-8i64..=8, 1..10),
    ) {
        let torus = TorusGrid::new(1, 32).unwrap();
        let graph = PathGraph::new(&LagrangianSpec::quadratic(1), torus, 0.25, 1.0).unwrap();
        let path = walk(&graph, start, &steps);
        let moved = path.translated(&torus, &[offset]);
        let a = path_action(&graph, &path, 0.0).unwrap();
        let b = path_action(&graph, &moved, 0.0).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
