// Hypothesis probes of the builtin Lagrangians: convexity, superlinearity,
// semiconcavity constants and the velocity bound used for the cutoff.
//
// cargo run --release --example probe_problem

use mather_ep::grid::Grids;
use mather_ep::problem::{HypothesisReport, LagrangianSpec, ProbeSamples};

pub fn run_example() -> mather_ep::Result<Vec<HypothesisReport>> {
    let mut out = Vec::new();
    for (name, spec) in [
        ("quadratic", LagrangianSpec::quadratic(1)),
        ("pendulum", LagrangianSpec::pendulum()),
        ("shifted", LagrangianSpec::shifted_quadratic(vec![0.5])),
        ("cosine 2D", LagrangianSpec::cosine(2, 0.5)),
    ] {
        let r = spec.probe_hypotheses(&ProbeSamples::default())?;
        println!(
            "{name:<10} C = {:8.3}  Γ = {:6.3}  K = {:6.3}  auto cutoff (ε = 0.05) = {:6.3}",
            r.estimated_c,
            r.estimated_gamma,
            r.velocity_bound,
            Grids::auto_cutoff(r.velocity_bound, 0.05)
        );
        out.push(r);
    }
    Ok(out)
}

fn main() -> mather_ep::Result<()> {
    run_example().map(|_| ())
}
