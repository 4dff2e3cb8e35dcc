// Epsilon-continuation of the pendulum's effective Hamiltonian at fixed h,
// extrapolated with `limit + a ε ln(1/ε) + b ε`.
//
// cargo run --release --example continuation

use mather_ep::ep_solver::SolverConfig;
use mather_ep::grid::{Grids, TorusGrid, VelocityGrid};
use mather_ep::limits::{continue_in_epsilon, ContinuationResult};
use mather_ep::problem::LagrangianSpec;

pub fn run_example() -> mather_ep::Result<ContinuationResult> {
    let spec = LagrangianSpec::pendulum();
    let torus = TorusGrid::new(1, 64)?;
    let grids = Grids::new(torus, VelocityGrid::node_aligned(1, &torus, 0.2, 1, 4.0)?)?;
    let schedule = [0.1, 0.05, 0.02, 0.01];
    let cont = continue_in_epsilon(&spec, 0.2, &schedule, &grids, &SolverConfig::default())?;
    for ((eps, _), value) in cont.schedule.iter().zip(&cont.effective_h) {
        println!("eps = {eps:<6}  lambda/h = {value:.6}");
    }
    println!("extrapolated limit {:.6} (fit residual {:.2e})", cont.limit, cont.fit.residual);
    Ok(cont)
}

fn main() -> mather_ep::Result<()> {
    run_example().map(|_| ())
}
