// Fixed-h large deviations of the quadratic measure: ε ln μ(𝕋 × [½, 1])
// against -inf I = -1/8.
//
// cargo run --release --example ldp_boxes

use mather_ep::ep_solver::SolverConfig;
use mather_ep::grid::{Grids, TorusGrid, VelocityGrid};
use mather_ep::ldp::{ldp_fixed_h, LdpOptions, LdpReport, PhaseBox, PhaseSet};
use mather_ep::limits::solve_schedule;
use mather_ep::problem::LagrangianSpec;

pub fn run_example() -> mather_ep::Result<LdpReport> {
    let spec = LagrangianSpec::quadratic(1);
    let grids = Grids::new(TorusGrid::new(1, 32)?, VelocityGrid::new(1, 3.0, 257)?)?;
    let schedule: Vec<(f64, f64)> = [0.1, 0.05, 0.02, 0.01].iter().map(|&e| (e, 0.1)).collect();
    let solutions = solve_schedule(&spec, &schedule, &grids, &SolverConfig::default())?;
    let set = PhaseSet::from(PhaseBox::full_torus(vec![(0.5, 1.0)], true)?);
    let report = ldp_fixed_h(&spec, &grids, &solutions, &set, &LdpOptions::default())?;
    for ((eps, _), m) in report.schedule.iter().zip(&report.scaled_log_masses) {
        println!("eps = {eps:<5}  eps ln mu(A) = {m:.5}");
    }
    println!("limit {:.5}  bound {:.5}  pass {}", report.limit, report.bound, report.pass);
    Ok(report)
}

fn main() -> mather_ep::Result<()> {
    run_example().map(|_| ())
}
