// Density of the entropy-penalized measure: mass, action, entropy and the
// holonomy residuals of its low Fourier modes.
//
// cargo run --release --example measure_diagnostics

use mather_ep::ep_solver::{solve_pair, SolverConfig};
use mather_ep::grid::{Grids, TorusGrid, VelocityGrid};
use mather_ep::measure::MeasureReport;
use mather_ep::problem::LagrangianSpec;

pub fn run_example() -> mather_ep::Result<MeasureReport> {
    let (eps, h) = (0.05, 0.2);
    let spec = LagrangianSpec::pendulum();
    let torus = TorusGrid::new(1, 64)?;
    let grids = Grids::new(torus, VelocityGrid::node_aligned(1, &torus, 0.2, 1, 4.0)?)?;
    let sol = solve_pair(&spec, eps, h, &grids, &SolverConfig::default())?;
    let report = MeasureReport::build(&sol, &spec, &grids, 5)?;
    println!("mass                 {:.12}", report.mass);
    println!("action               {:.6}", report.action);
    println!("entropy              {:.6}", report.entropy);
    println!("lambda / h           {:.6}", report.effective_h);
    println!("identity gap         {:.3e}", report.identity_gap(eps));
    for r in &report.holonomy_residuals {
        println!("holonomy k = {:?}  |r| = {:.3e}", r.mode, r.magnitude());
    }
    Ok(report)
}

fn main() -> mather_ep::Result<()> {
    run_example().map(|_| ())
}
