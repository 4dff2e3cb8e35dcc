// Minimum mean cycle of the node-aligned path graph: the exact discrete
// critical value, with the cycle that attains it.
//
// cargo run --release --example critical_cycle

use mather_ep::discrete_am::{min_mean_cycle, PathGraph};
use mather_ep::grid::TorusGrid;
use mather_ep::problem::LagrangianSpec;

pub fn run_example() -> mather_ep::Result<Vec<f64>> {
    let torus = TorusGrid::new(1, 64)?;
    let mut values = Vec::new();
    for (name, spec, h) in [
        ("pendulum", LagrangianSpec::pendulum(), 0.2),
        ("quadratic", LagrangianSpec::quadratic(1), 0.2),
        ("shifted 1/2", LagrangianSpec::shifted_quadratic(vec![0.5]), 0.125),
    ] {
        let graph = PathGraph::new(&spec, torus, h, 3.0)?;
        let crit = min_mean_cycle(&graph)?;
        println!(
            "{name:<12} H = {:+.15}  cycle of {} steps through nodes {:?}",
            crit.hbar,
            crit.cycle.len(),
            &crit.cycle.nodes[..crit.cycle.nodes.len().min(6)]
        );
        values.push(crit.hbar);
    }
    Ok(values)
}

fn main() -> mather_ep::Result<()> {
    run_example().map(|_| ())
}
