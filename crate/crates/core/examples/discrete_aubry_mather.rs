// Mañé potential, nonwandering set, calibrated subaction from the Peierls
// barrier and a separating subaction for the pendulum.
//
// cargo run --release --example discrete_aubry_mather

use mather_ep::discrete_am::{
    calibrated_from_barrier, default_k_max, min_mean_cycle, nonwandering_set, representation_check,
    separating_subaction, ManeMatrix, PathGraph, SeparatingWeights,
};
use mather_ep::grid::TorusGrid;
use mather_ep::problem::LagrangianSpec;

pub fn run_example() -> mather_ep::Result<Vec<usize>> {
    let spec = LagrangianSpec::pendulum();
    let torus = TorusGrid::new(1, 64)?;
    let graph = PathGraph::new(&spec, torus, 0.2, 3.0)?;
    let hbar = min_mean_cycle(&graph)?.hbar;
    let mane = ManeMatrix::build(&graph, hbar)?;
    let omega = nonwandering_set(&mane, 1e-6);
    let k_max = default_k_max(&torus);
    let u = calibrated_from_barrier(&graph, omega[0], hbar, k_max, k_max / 4, 1e-6)?;
    let sep = separating_subaction(&graph, &mane, &omega, 1e-6, SeparatingWeights::Uniform)?;
    println!("critical value         {hbar}");
    println!("nonwandering nodes     {omega:?}");
    println!("barrier h(1/2, 0)      {:.6}", u.values()[32]);
    println!("representation error   {:.3e}", representation_check(&u, &mane, &omega));
    println!("separation gap off Ω   {:.3e}", sep.min_gap_off_omega);
    Ok(omega)
}

fn main() -> mather_ep::Result<()> {
    run_example().map(|_| ())
}
