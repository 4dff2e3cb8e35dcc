//! The minimizing density `μ = θ(x) γ(x, v)`, its marginal `θ`, and the
//! scalar diagnostics derived from it.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ep_solver::{BellmanPlan, Direction, EpSolution};
use crate::error::{Error, Result};
use crate::grid::{log_sum_exp, pairwise_sum, Density, Grids, ScalarField};
use crate::problem::LagrangianSpec;

/// Largest tolerated `|mass - 1|` before the grid is declared inadequate.
pub const MASS_TOLERANCE: f64 = 1e-3;

/// Default highest Fourier mode in the holonomy test family.
pub const DEFAULT_HOLONOMY_MODES: usize = 5;

/// Scalars extracted from one density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub action: f64,
    pub entropy: f64,
    /// `λ / h`
    pub effective_h: f64,
    pub mass: f64,
    pub holonomy_residuals: Vec<HolonomyResidual>,
    pub theta_fixed_point_residual: f64,
}

impl MeasureReport {
    pub fn build(sol: &EpSolution, spec: &LagrangianSpec, grids: &Grids, modes: usize) -> Result<Self> {
        let mu = build_density(sol, spec, grids)?;
        Ok(Self {
            action: action(&mu, spec),
            entropy: entropy(&mu)?,
            effective_h: sol.effective_hamiltonian(),
            mass: mu.mass(),
            holonomy_residuals: holonomy_residual(&mu, sol.h, modes),
            theta_fixed_point_residual: theta_fixed_point_residual(sol, spec, grids)?,
        })
    }

    /// `|action + ε·entropy - λ/h|`
    pub fn identity_gap(&self, eps: f64) -> f64 {
        (self.action + eps * self.entropy - self.effective_h).abs()
    }

    pub fn max_holonomy(&self) -> f64 {
        max_holonomy(&self.holonomy_residuals)
    }
}

/// Builds `μ(x,v) = θ(x) exp(-(hL(x,v) + φ(x+hv) - φ(x) - λ)/(εh))` in the
/// log domain. The density is not renormalized.
pub fn build_density(sol: &EpSolution, spec: &LagrangianSpec, grids: &Grids) -> Result<Density> {
    let plan = BellmanPlan::new(spec, sol.h, grids, Direction::Forward)?;
    let mu = density_from_plan(sol, &plan)?;
    let mass = mu.mass();
    if (mass - 1.0).abs() > MASS_TOLERANCE || !mass.is_finite() {
        return Err(Error::MassDeviation { mass });
    }
    Ok(mu)
}

pub(crate) fn density_from_plan(sol: &EpSolution, plan: &BellmanPlan) -> Result<Density> {
    let temp = sol.epsilon * sol.h;
    let nv = plan.velocity().len();
    let phi = sol.phi.values();
    let phibar = sol.phibar.values();
    let logs: Vec<f64> = (0..plan.torus().len())
        .into_par_iter()
        .flat_map_iter(|xi| {
            let mut row = Vec::with_capacity(nv);
            plan.row_exponents(xi, phi, &mut row);
            let base = phibar[xi] - sol.lambda;
            row.into_iter().map(move |f| -(base + f) / temp)
        })
        .collect();
    Density::from_log_values(*plan.torus(), plan.velocity().clone(), logs)
}

/// `θ(x) = exp(-(φ̄(x) + φ(x))/(εh))`
pub fn marginal_theta(sol: &EpSolution) -> ScalarField {
    let temp = sol.epsilon * sol.h;
    let values = sol
        .phi
        .values()
        .iter()
        .zip(sol.phibar.values())
        .map(|(a, b)| (-(a + b) / temp).exp())
        .collect();
    ScalarField::new(*sol.phi.grid(), values).expect("theta is finite for a normalized pair")
}

/// `max_x |∫ θ(x-hv) exp(-(hL(x-hv,v) + φ(x) - φ(x-hv) - λ)/(εh)) dv - θ(x)|`.
///
/// The integrand is assembled from interpolated `φ̄ + φ` at `x - hv`, so the
/// interpolated `φ(x-hv)` cancels and only the backward operator remains.
pub fn theta_fixed_point_residual(sol: &EpSolution, spec: &LagrangianSpec, grids: &Grids) -> Result<f64> {
    let plan = BellmanPlan::new(spec, sol.h, grids, Direction::Backward)?;
    let temp = sol.epsilon * sol.h;
    let ln_dv = grids.velocity.cell_volume().ln();
    let phi = sol.phi.values();
    let phibar = sol.phibar.values();
    let theta = marginal_theta(sol);
    let worst = (0..grids.torus.len())
        .into_par_iter()
        .map_init(Vec::new, |row, xi| {
            plan.row_exponents(xi, phibar, row);
            let terms: Vec<f64> = row.iter().map(|f| -(f + phi[xi] - sol.lambda) / temp).collect();
            let lhs = (log_sum_exp(&terms) + ln_dv).exp();
            (lhs - theta.values()[xi]).abs()
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// `S[μ] = ∫ μ ln(μ / ∫μ(x,w)dw) dx dv` with `0 ln 0 = 0`.
pub fn entropy(mu: &Density) -> Result<f64> {
    let nv = mu.velocity().len();
    let ln_dv = mu.velocity().cell_volume().ln();
    let logs = mu.log_values();
    let mut terms = Vec::with_capacity(logs.len());
    for xi in 0..mu.torus().len() {
        let row = &logs[xi * nv..(xi + 1) * nv];
        let ln_marginal = log_sum_exp(row) + ln_dv;
        for &l in row {
            let m = l.exp();
            if m > 0.0 {
                terms.push(m * (l - ln_marginal));
            }
        }
    }
    Ok(mu.cell_volume() * pairwise_sum(&terms))
}

/// `∫ L dμ` by product-grid quadrature.
pub fn action(mu: &Density, spec: &LagrangianSpec) -> f64 {
    mu.integrate(|_, x, _, v| spec.eval(x, v))
}

/// Holonomy defect of one Fourier mode `e_k(x) = exp(2πi k·x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolonomyResidual {
    pub mode: Vec<i64>,
    pub re: f64,
    pub im: f64,
}

impl HolonomyResidual {
    pub fn magnitude(&self) -> f64 {
        self.re.abs().max(self.im.abs())
    }
}

pub fn max_holonomy(residuals: &[HolonomyResidual]) -> f64 {
    residuals.iter().map(HolonomyResidual::magnitude).fold(0.0, f64::max)
}

/// Nonzero integer modes with `|k_i| ≤ k_max`, one representative per `±k` pair.
pub fn fourier_modes(dim: usize, k_max: usize) -> Vec<Vec<i64>> {
    let side = 2 * k_max + 1;
    let total = side.pow(dim as u32);
    let mut modes = Vec::new();
    for flat in 0..total {
        let mut rest = flat;
        let mut k = vec![0i64; dim];
        for axis in (0..dim).rev() {
            k[axis] = (rest % side) as i64 - k_max as i64;
            rest /= side;
        }
        // keep k if its first nonzero component is positive
        if k.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0) {
            modes.push(k);
        }
    }
    modes
}

/// `|∫ (e_k(x+hv) - e_k(x)) dμ|`, real and imaginary parts, for each mode.
pub fn holonomy_residual(mu: &Density, h: f64, k_max: usize) -> Vec<HolonomyResidual> {
    let modes = fourier_modes(mu.torus().dim(), k_max);
    modes
        .into_par_iter()
        .map(|k| {
            let phase = |x: &[f64]| TAU * k.iter().zip(x).map(|(ki, xi)| *ki as f64 * xi).sum::<f64>();
            let re = mu.integrate(|_, x, _, v| {
                let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
                phase(&y).cos() - phase(x).cos()
            });
            let im = mu.integrate(|_, x, _, v| {
                let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
                phase(&y).sin() - phase(x).sin()
            });
            HolonomyResidual {
                mode: k,
                re: re.abs(),
                im: im.abs(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ep_solver::{solve_pair, SolverConfig};
    use crate::grid::{TorusGrid, VelocityGrid};

    fn quadratic_setup(omega: Option<f64>) -> (LagrangianSpec, Grids, EpSolution) {
        let spec = match omega {
            Some(w) => LagrangianSpec::shifted_quadratic(vec![w]),
            None => LagrangianSpec::quadratic(1),
        };
        let grids = Grids::new(TorusGrid::new(1, 32).unwrap(), VelocityGrid::new(1, 1.5, 301).unwrap()).unwrap();
        let sol = solve_pair(&spec, 0.01, 0.1, &grids, &SolverConfig::default()).unwrap();
        (spec, grids, sol)
    }

    #[test]
    fn quadratic_density_is_gaussian() {
        let (spec, grids, sol) = quadratic_setup(None);
        let mu = build_density(&sol, &spec, &grids).unwrap();
        let hbar = sol.lambda / sol.h;
        for xi in 0..grids.torus.len() {
            for vi in (0..grids.velocity.len()).step_by(37) {
                let v = grids.velocity.velocity(vi)[0];
                let expected = (-(v * v / 2.0 - hbar) / 0.01).exp();
                assert!((mu.value(xi, vi) - expected).abs() < 1e-9 * expected.max(1.0));
            }
        }
        assert!((mu.mass() - 1.0).abs() < 1e-6);
        assert!((entropy(&mu).unwrap() - 0.883646).abs() < 1e-5);
        assert!((action(&mu, &spec) - 0.005).abs() < 1e-8);
        assert!(theta_fixed_point_residual(&sol, &spec, &grids).unwrap() < 1e-8);
        assert!(max_holonomy(&holonomy_residual(&mu, sol.h, 5)) < 1e-10);
    }

    #[test]
    fn shifted_quadratic_entropy_is_shift_invariant() {
        let (spec, grids, sol) = quadratic_setup(Some(0.25));
        let mu = build_density(&sol, &spec, &grids).unwrap();
        assert!((entropy(&mu).unwrap() - 0.883646).abs() < 1e-5);
        let mean_v = mu.integrate(|_, _, _, v| v[0]);
        assert!((mean_v - 0.25).abs() < 1e-6);
    }

    #[test]
    fn uniform_density_has_zero_entropy() {
        let t = TorusGrid::new(1, 8).unwrap();
        let v = VelocityGrid::new(1, 1.0, 21).unwrap();
        // nodes 0, 0.1, ..., 0.9 carry mass one; the rest are exact zeros
        let values: Vec<f64> = (0..t.len() * v.len())
            .map(|k| {
                let w = v.velocity(k % v.len())[0];
                if (-1e-9..0.95).contains(&w) { 1.0 } else { 0.0 }
            })
            .collect();
        let mu = Density::from_values(t, v, &values).unwrap();
        assert!((mu.mass() - 1.0).abs() < 1e-14);
        assert!(entropy(&mu).unwrap().abs() < 1e-14);
    }

    #[test]
    fn product_density_entropy_ignores_x_factor() {
        let t = TorusGrid::new(1, 16).unwrap();
        let v = VelocityGrid::new(1, 2.0, 81).unwrap();
        let gamma: Vec<f64> = (0..v.len()).map(|j| (-v.velocity(j)[0].powi(2)).exp()).collect();
        let z: f64 = gamma.iter().sum::<f64>() * v.cell_volume();
        let rho: Vec<f64> = (0..t.len()).map(|i| 1.0 + 0.5 * (TAU * t.point(i)[0]).cos()).collect();
        let values: Vec<f64> = (0..t.len())
            .flat_map(|i| { let r = rho[i]; gamma.iter().map(move |g| r * g / z) })
            .collect::<Vec<_>>();
        let mu = Density::from_values(t, v.clone(), &values).unwrap();
        let expected: f64 = gamma
            .iter()
            .map(|g| g / z * (g / z).ln())
            .sum::<f64>()
            * v.cell_volume();
        assert!((entropy(&mu).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn point_mass_at_rest_has_no_holonomy_defect() {
        let t = TorusGrid::new(1, 16).unwrap();
        let v = VelocityGrid::new(1, 1.0, 11).unwrap();
        let mut values = vec![0.0; t.len() * v.len()];
        values[3 * v.len() + 5] = 1.0 / (t.cell_volume() * v.cell_volume());
        let mu = Density::from_values(t, v, &values).unwrap();
        assert_eq!(max_holonomy(&holonomy_residual(&mu, 0.3, 5)), 0.0);
    }

    #[test]
    fn negative_density_rejected() {
        let t = TorusGrid::new(1, 4).unwrap();
        let v = VelocityGrid::new(1, 1.0, 3).unwrap();
        assert!(matches!(
            Density::from_values(t, v, &[-1.0; 12]),
            Err(Error::NegativeDensity)
        ));
    }

    #[test]
    fn fourier_mode_family() {
        assert_eq!(fourier_modes(1, 3), vec![vec![1], vec![2], vec![3]]);
        assert_eq!(fourier_modes(2, 1).len(), 4);
    }
}
