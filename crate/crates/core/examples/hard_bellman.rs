// The ε = 0 (min-plus) Bellman equation: critical value from the drift of
// the gauge-fixed iteration, and the calibrated pair it produces.
//
// cargo run --release --example hard_bellman

use mather_ep::grid::{Grids, TorusGrid, VelocityGrid};
use mather_ep::limits::{critical_hard_bellman, hard_bellman, HardBellmanConfig, HardSolution};
use mather_ep::problem::LagrangianSpec;
use mather_ep::Error;

pub fn run_example() -> mather_ep::Result<HardSolution> {
    let spec = LagrangianSpec::pendulum();
    let h = 0.2;
    let torus = TorusGrid::new(1, 64)?;
    let grids = Grids::new(torus, VelocityGrid::node_aligned(1, &torus, h, 1, 4.0)?)?;
    let config = HardBellmanConfig::default();
    let sol = critical_hard_bellman(&spec, h, &grids, -0.9, &config)?;
    println!("critical value  {:.12}", sol.hbar);
    println!("iterations      {}", sol.iterations);
    // A wrong critical value leaves a nonzero drift.
    match hard_bellman(&spec, h, &grids, -0.98, &config) {
        Err(Error::NoConvergence { drift, .. }) => println!("H = -0.98 rejected, drift {drift:.4}"),
        other => println!("unexpected: {:?}", other.map(|s| s.hbar)),
    }
    Ok(sol)
}

fn main() -> mather_ep::Result<()> {
    run_example().map(|_| ())
}
