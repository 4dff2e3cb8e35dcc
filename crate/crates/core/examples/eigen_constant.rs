// Soft Bellman eigen-constant of the quadratic Lagrangian and its Perron
// (Hopf–Cole) cross-check.
//
// cargo run --release --example eigen_constant

use mather_ep::ep_solver::{perron_eigenvalue, solve_pair, SolverConfig};
use mather_ep::grid::{Grids, TorusGrid, VelocityGrid};
use mather_ep::problem::LagrangianSpec;

pub fn run_example() -> mather_ep::Result<f64> {
    let (eps, h) = (0.01, 0.1);
    let spec = LagrangianSpec::quadratic(1);
    let grids = Grids::new(TorusGrid::new(1, 64)?, VelocityGrid::new(1, 2.0, 161)?)?;
    let sol = solve_pair(&spec, eps, h, &grids, &SolverConfig::default())?;
    let exact = -eps * h * (2.0 * std::f64::consts::PI * eps).sqrt().ln();
    let perron = perron_eigenvalue(&spec, eps, h, &grids)?;
    println!("lambda          {:.9}", sol.lambda);
    println!("closed form     {exact:.9}");
    println!("Perron lambda   {:.9}", perron.lambda);
    println!("iterations      {}", sol.iterations);
    Ok(sol.lambda)
}

fn main() -> mather_ep::Result<()> {
    run_example().map(|_| ())
}
