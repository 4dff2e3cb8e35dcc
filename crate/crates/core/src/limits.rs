//! Continuation in `ε` and in `(ε, h)`, the hard (min-plus) Bellman solver,
//! gradients of the limit subaction, rate functions, the projected Aubry set
//! and the free energy.

use serde::{Deserialize, Serialize};

use crate::ep_solver::{solve_pair_from, BellmanPlan, Direction, EpSolution, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::{log_sum_exp, Grids, ScalarField, TorusGrid};
use crate::problem::LagrangianSpec;

/// Fit of `y(ε) = limit + a·ε·ln(1/ε) + b·ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonFit {
    pub limit: f64,
    pub a: f64,
    pub b: f64,
    pub points: usize,
    /// Largest absolute residual of the fit over its window.
    pub residual: f64,
}

impl EpsilonFit {
    pub fn eval(&self, eps: f64) -> f64 {
        self.limit + self.a * eps * (1.0 / eps).ln() + self.b * eps
    }
}

/// Least-squares fit of the `ε → 0` model on the last `window` points.
///
/// Three or more points fit all three coefficients, two points drop the
/// linear term, a single point is returned as is.
pub fn fit_epsilon_model(eps: &[f64], values: &[f64], window: usize) -> Result<EpsilonFit> {
    if eps.len() != values.len() || eps.is_empty() {
        return Err(Error::InvalidInput("fit needs matching, nonempty samples".into()));
    }
    let n = eps.len().min(window.max(1));
    let (e, y) = (&eps[eps.len() - n..], &values[values.len() - n..]);
    let basis = |t: f64| [1.0, t * (1.0 / t).ln(), t];
    let k = n.min(3);
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (t, yi) in e.iter().zip(y) {
        let row = basis(*t);
        for i in 0..k {
            aty[i] += row[i] * yi;
            for j in 0..k {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let coef = solve_small(&ata, &aty, k)
        .ok_or_else(|| Error::InvalidInput("degenerate epsilon schedule".into()))?;
    let mut fit = EpsilonFit {
        limit: coef[0],
        a: if k > 1 { coef[1] } else { 0.0 },
        b: if k > 2 { coef[2] } else { 0.0 },
        points: n,
        residual: 0.0,
    };
    fit.residual = e.iter().zip(y).map(|(t, yi)| (fit.eval(*t) - yi).abs()).fold(0.0, f64::max);
    Ok(fit)
}

/// Gaussian elimination with partial pivoting on the leading `k × k` block.
fn solve_small(a: &[[f64; 3]; 3], b: &[f64; 3], k: usize) -> Option<[f64; 3]> {
    let mut m = *a;
    let mut r = *b;
    for col in 0..k {
        let pivot = (col..k).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        r.swap(col, pivot);
        for row in col + 1..k {
            let f = m[row][col] / m[col][col];
            for c in col..k {
                m[row][c] -= f * m[col][c];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..k).rev() {
        let s: f64 = (row + 1..k).map(|c| m[row][c] * x[c]).sum();
        x[row] = (r[row] - s) / m[row][row];
    }
    Some(x)
}

/// Fails with `NotCauchy` unless the last successive gap is below the one
/// before it (or below `floor`).
pub fn check_cauchy(values: &[f64], floor: f64) -> Result<Vec<f64>> {
    let gaps: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if gaps.len() >= 2 {
        let last = gaps[gaps.len() - 1];
        if last > floor && last >= gaps[gaps.len() - 2] {
            return Err(Error::NotCauchy { gaps });
        }
    }
    Ok(gaps)
}

/// Absolute gap below which successive continuation values count as converged.
pub const CAUCHY_FLOOR: f64 = 1e-9;

/// Result of a continuation run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuationResult {
    /// `(ε, h)` per schedule point.
    pub schedule: Vec<(f64, f64)>,
    /// `λ/h` per schedule point.
    pub effective_h: Vec<f64>,
    pub gaps: Vec<f64>,
    pub fit: EpsilonFit,
    /// Extrapolated `H̄_h` (fixed `h`) or `H̄_0` (joint limit).
    pub limit: f64,
    /// Solution at the last schedule point.
    pub terminal: EpSolution,
}

impl ContinuationResult {
    /// Terminal fields `(φ, φ̄)`.
    pub fn fields(&self) -> (&ScalarField, &ScalarField) {
        (&self.terminal.phi, &self.terminal.phibar)
    }
}

/// Extrapolation window of the continuation fits.
pub const CONTINUATION_WINDOW: usize = 3;

/// Runs [`solve_pair_from`] along a strictly decreasing `ε` schedule at fixed
/// `h`, warm-starting each point from the previous one.
pub fn continue_in_epsilon(
    spec: &LagrangianSpec,
    h: f64,
    schedule: &[f64],
    grids: &Grids,
    config: &SolverConfig,
) -> Result<ContinuationResult> {
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::PreconditionFailed("epsilon schedule must be strictly decreasing".into()));
    }
    let pairs: Vec<(f64, f64)> = schedule.iter().map(|&e| (e, h)).collect();
    run_schedule(spec, &pairs, grids, config)
}

/// Joint limit along `(ε_n, h_n)` with `h_n ≥ ε_n`.
pub fn continue_in_h(
    spec: &LagrangianSpec,
    schedule: &[(f64, f64)],
    grids: &Grids,
    config: &SolverConfig,
) -> Result<ContinuationResult> {
    if let Some(&(e, h)) = schedule.iter().find(|(e, h)| h < e) {
        return Err(Error::PreconditionFailed(format!("coupled schedule needs h >= epsilon, got ({e}, {h})")));
    }
    if schedule.windows(2).any(|w| w[1].0 >= w[0].0) {
        return Err(Error::PreconditionFailed("epsilon must decrease along the schedule".into()));
    }
    run_schedule(spec, schedule, grids, config)
}

/// The default coupled schedule `h_n = 2 ε_n`.
pub fn coupled_schedule(eps: &[f64]) -> Vec<(f64, f64)> {
    eps.iter().map(|&e| (e, 2.0 * e)).collect()
}

fn run_schedule(
    spec: &LagrangianSpec,
    schedule: &[(f64, f64)],
    grids: &Grids,
    config: &SolverConfig,
) -> Result<ContinuationResult> {
    let solutions = solve_schedule(spec, schedule, grids, config)?;
    summarize(schedule, solutions)
}

/// Solves every schedule point in order, warm-starting from the previous one.
pub fn solve_schedule(
    spec: &LagrangianSpec,
    schedule: &[(f64, f64)],
    grids: &Grids,
    config: &SolverConfig,
) -> Result<Vec<EpSolution>> {
    if schedule.is_empty() {
        return Err(Error::InvalidInput("empty schedule".into()));
    }
    let mut solutions: Vec<EpSolution> = Vec::with_capacity(schedule.len());
    for &(eps, h) in schedule {
        let warm = solutions.last().map(|s| (&s.phi, &s.phibar));
        let sol = solve_pair_from(spec, eps, h, grids, config, warm)?;
        solutions.push(sol);
    }
    Ok(solutions)
}

/// Builds a [`ContinuationResult`] from solutions computed elsewhere.
pub fn summarize(schedule: &[(f64, f64)], mut solutions: Vec<EpSolution>) -> Result<ContinuationResult> {
    let effective_h: Vec<f64> = solutions.iter().map(EpSolution::effective_hamiltonian).collect();
    let gaps = check_cauchy(&effective_h, CAUCHY_FLOOR)?;
    let eps: Vec<f64> = schedule.iter().map(|p| p.0).collect();
    let fit = fit_epsilon_model(&eps, &effective_h, CONTINUATION_WINDOW)?;
    Ok(ContinuationResult {
        schedule: schedule.to_vec(),
        effective_h,
        gaps,
        limit: fit.limit,
        fit,
        terminal: solutions.pop().expect("nonempty schedule"),
    })
}

/// Controls for [`hard_bellman`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardBellmanConfig {
    /// Bound on both the gauge-fixed update and the per-sweep drift.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub reference_node: usize,
}

impl Default for HardBellmanConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 200_000,
            reference_node: 0,
        }
    }
}

/// Calibrated pair of the `ε = 0` operators.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HardSolution {
    pub h: f64,
    pub phi: ScalarField,
    pub phibar: ScalarField,
    /// Value of `H̄_h` the fields are calibrated for.
    pub hbar: f64,
    /// Per-sweep drift `T[φ](x_ref)` of the forward and backward iterations.
    pub drift: (f64, f64),
    pub iterations: usize,
    /// `max |T[φ] - φ|` of the forward operator at the returned fields.
    pub residual: f64,
}

struct MinPlus {
    field: ScalarField,
    drift: f64,
    iterations: usize,
}

/// Gauge-fixed min-plus iteration of `T[ψ] = min_v ψ(target) + cost - h H̄`.
/// Converges in shape for any `H̄`; the drift at the fixed shape measures
/// `h (H̄_true - H̄)`.
fn min_plus(plan: &BellmanPlan, shift: f64, config: &HardBellmanConfig) -> Result<MinPlus> {
    let reference = config.reference_node;
    let mut psi = ScalarField::constant(*plan.torus(), 0.0);
    let mut residual = f64::INFINITY;
    let mut drift = f64::NAN;
    for iteration in 1..=config.max_iterations {
        let (image, _) = plan.apply_hard(&psi, shift);
        drift = image.values()[reference];
        let next = image.shifted(-drift);
        residual = next.sup_distance(&psi);
        psi = next;
        if residual <= config.tolerance {
            return Ok(MinPlus {
                field: psi,
                drift,
                iterations: iteration,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: config.max_iterations,
        residual,
        drift,
    })
}

/// Solves the calibrated equations at the supplied `H̄_h`; a wrong value
/// shows up as a nonzero drift and is reported as `NoConvergence`.
pub fn hard_bellman(
    spec: &LagrangianSpec,
    h: f64,
    grids: &Grids,
    hbar: f64,
    config: &HardBellmanConfig,
) -> Result<HardSolution> {
    let sol = critical_hard_bellman(spec, h, grids, hbar, config)?;
    let worst = sol.drift.0.abs().max(sol.drift.1.abs());
    if worst > config.tolerance {
        return Err(Error::NoConvergence {
            iterations: sol.iterations,
            residual: sol.residual,
            drift: if sol.drift.0.abs() >= sol.drift.1.abs() { sol.drift.0 } else { sol.drift.1 },
        });
    }
    Ok(HardSolution { hbar, ..sol })
}

/// Like [`hard_bellman`] but absorbs the forward drift into `H̄_h`, returning
/// the critical value of the discretized operator itself.
pub fn critical_hard_bellman(
    spec: &LagrangianSpec,
    h: f64,
    grids: &Grids,
    hbar_guess: f64,
    config: &HardBellmanConfig,
) -> Result<HardSolution> {
    let forward = BellmanPlan::new(spec, h, grids, Direction::Forward)?;
    let backward = BellmanPlan::new(spec, h, grids, Direction::Backward)?;
    let fwd = min_plus(&forward, h * hbar_guess, config)?;
    let bwd = min_plus(&backward, h * hbar_guess, config)?;
    let hbar = hbar_guess + fwd.drift / h;
    let (image, _) = forward.apply_hard(&fwd.field, h * hbar);
    let residual = image.sup_distance(&fwd.field);
    let phibar = bwd.field.shifted(-(0..grids.torus.len())
        .map(|i| fwd.field.values()[i] + bwd.field.values()[i])
        .fold(f64::INFINITY, f64::min));
    Ok(HardSolution {
        h,
        phi: fwd.field,
        phibar,
        hbar,
        drift: (fwd.drift, bwd.drift),
        iterations: fwd.iterations + bwd.iterations,
        residual,
    })
}

/// Largest violation of `φ(x) ≤ φ(x+hv) + h(L(x,v) - H̄)` over the grid.
pub fn subaction_violation(spec: &LagrangianSpec, h: f64, grids: &Grids, phi: &ScalarField, hbar: f64) -> Result<f64> {
    let plan = BellmanPlan::new(spec, h, grids, Direction::Forward)?;
    let mut worst = f64::NEG_INFINITY;
    let mut row = Vec::new();
    for xi in 0..grids.torus.len() {
        plan.row_exponents(xi, phi.values(), &mut row);
        for f in &row {
            worst = worst.max(phi.values()[xi] - (f - h * hbar));
        }
    }
    Ok(worst)
}

/// Central-difference gradient with a kink mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientField {
    pub grid: TorusGrid,
    /// `N` components per node, node-major.
    pub gradients: Vec<f64>,
    pub kinks: Vec<bool>,
    pub threshold: f64,
}

impl GradientField {
    pub fn at(&self, node: usize) -> &[f64] {
        let n = self.grid.dim();
        &self.gradients[node * n..(node + 1) * n]
    }

    pub fn is_kink(&self, node: usize) -> bool {
        self.kinks[node]
    }

    pub fn norm_at(&self, node: usize) -> f64 {
        self.at(node).iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Default kink threshold `10 · C̄ · Δx`.
pub fn kink_threshold(semiconcavity_bound: f64, grid: &TorusGrid) -> f64 {
    10.0 * semiconcavity_bound * grid.spacing()
}

/// Central differences per axis; a node is a kink when forward and
/// backward differences on some axis differ by more than `threshold`.
pub fn grad_phi0(phi0: &ScalarField, threshold: f64) -> GradientField {
    let grid = *phi0.grid();
    let dim = grid.dim();
    let dx = grid.spacing();
    let values = phi0.values();
    let mut gradients = Vec::with_capacity(grid.len() * dim);
    let mut kinks = Vec::with_capacity(grid.len());
    for flat in 0..grid.len() {
        let idx: Vec<i64> = grid.multi_index(flat).iter().map(|&i| i as i64).collect();
        let mut kink = false;
        for axis in 0..dim {
            let mut up = idx.clone();
            let mut down = idx.clone();
            up[axis] += 1;
            down[axis] -= 1;
            let fwd = (values[grid.flat_index(&up)] - values[flat]) / dx;
            let bwd = (values[flat] - values[grid.flat_index(&down)]) / dx;
            gradients.push(0.5 * (fwd + bwd));
            kink |= (fwd - bwd).abs() > threshold;
        }
        kinks.push(kink);
    }
    GradientField {
        grid,
        gradients,
        kinks,
        threshold,
    }
}

/// `I(x,v) = L(x,v) + ∇φ_0(x)·v - H̄_0` at the nearest node, `+∞` on kinks.
pub fn rate_i(spec: &LagrangianSpec, grad: &GradientField, hbar0: f64, x: &[f64], v: &[f64]) -> f64 {
    let node = grad.grid.nearest(x);
    if grad.is_kink(node) {
        return f64::INFINITY;
    }
    let p = grad.at(node);
    let xn = grad.grid.point(node);
    spec.eval(&xn, v) + p.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() - hbar0
}

/// `I_h(x,v) = (φ̄_h(x) + φ_h(x+hv))/h + L(x,v) - H̄_h` with interpolation.
pub fn rate_i_h(
    phi: &ScalarField,
    phibar: &ScalarField,
    spec: &LagrangianSpec,
    h: f64,
    hbar: f64,
    x: &[f64],
    v: &[f64],
) -> f64 {
    let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    (phibar.interp(x) + phi.interp(&y)) / h + spec.eval(x, v) - hbar
}

/// Nodes where `φ_0 + φ̄_0 ≤ min(φ_0 + φ̄_0) + tolerance`.
pub fn aubry_projection(phi0: &ScalarField, phibar0: &ScalarField, tolerance: f64) -> Vec<usize> {
    let sum: Vec<f64> = phi0.values().iter().zip(phibar0.values()).map(|(a, b)| a + b).collect();
    let min = sum.iter().copied().fold(f64::INFINITY, f64::min);
    (0..sum.len()).filter(|&i| sum[i] <= min + tolerance).collect()
}

/// Free energy along a schedule and its `ε → 0` extrapolation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FreeEnergy {
    pub epsilons: Vec<f64>,
    pub values: Vec<f64>,
    pub fit: EpsilonFit,
}

/// `ε ln ∫ exp(p·v/ε) γ_{ε,h}(x,v) dv` per solution, with `γ` the conditional
/// velocity factor of `μ_{ε,h}` at node `x`.
pub fn free_energy(
    spec: &LagrangianSpec,
    solutions: &[EpSolution],
    grids: &Grids,
    p: &[f64],
    node: usize,
) -> Result<FreeEnergy> {
    if p.len() != grids.torus.dim() {
        return Err(Error::InvalidInput("covector dimension differs from the torus".into()));
    }
    let mut epsilons = Vec::with_capacity(solutions.len());
    let mut values = Vec::with_capacity(solutions.len());
    for sol in solutions {
        let plan = BellmanPlan::new(spec, sol.h, grids, Direction::Forward)?;
        let (eps, temp) = (sol.epsilon, sol.epsilon * sol.h);
        let mut row = Vec::new();
        plan.row_exponents(node, sol.phi.values(), &mut row);
        let phi_x = sol.phi.values()[node];
        let terms: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(vi, f)| {
                let pv: f64 = p.iter().zip(grids.velocity.velocity(vi)).map(|(a, b)| a * b).sum();
                pv / eps - (f - phi_x - sol.lambda) / temp
            })
            .collect();
        let peak = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let edge = (0..terms.len())
            .filter(|&vi| grids.velocity.on_boundary(vi))
            .map(|vi| terms[vi])
            .fold(f64::NEG_INFINITY, f64::max);
        if edge - peak > crate::ep_solver::BOUNDARY_RATIO.ln() {
            return Err(Error::CutoffTooSmall {
                x: grids.torus.point(node),
                ratio: (edge - peak).exp(),
            });
        }
        epsilons.push(eps);
        values.push(eps * (log_sum_exp(&terms) + grids.velocity.cell_volume().ln()));
    }
    let fit = fit_epsilon_model(&epsilons, &values, CONTINUATION_WINDOW)?;
    Ok(FreeEnergy { epsilons, values, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VelocityGrid;
    use std::f64::consts::PI;

    #[test]
    fn fit_recovers_model_exactly() {
        let eps = [0.1f64, 0.05, 0.02, 0.01];
        let y: Vec<f64> = eps.iter().map(|e| -1.0 + 0.3 * e * (1.0 / e).ln() - 2.0 * e).collect();
        let fit = fit_epsilon_model(&eps, &y, 3).unwrap();
        assert!((fit.limit + 1.0).abs() < 1e-12);
        assert!((fit.a - 0.3).abs() < 1e-10 && (fit.b + 2.0).abs() < 1e-9);
        let quad: Vec<f64> = eps.iter().map(|e| -e * (2.0 * PI * e).sqrt().ln()).collect();
        assert!(fit_epsilon_model(&eps, &quad, 4).unwrap().limit.abs() < 1e-12);
    }

    #[test]
    fn cauchy_check() {
        assert!(check_cauchy(&[1.0, 0.5, 0.3, 0.2], 1e-9).is_ok());
        assert!(matches!(check_cauchy(&[1.0, 0.9, 0.5], 1e-9), Err(Error::NotCauchy { .. })));
        assert!(check_cauchy(&[1.0, 1.0, 1.0], 1e-9).is_ok());
    }

    fn pendulum_grids(m: usize, h: f64) -> Grids {
        let t = TorusGrid::new(1, m).unwrap();
        Grids::new(t, VelocityGrid::node_aligned(1, &t, h, 1, 4.0).unwrap()).unwrap()
    }

    #[test]
    fn hard_bellman_quadratic_zero_is_fixed() {
        let t = TorusGrid::new(1, 32).unwrap();
        let g = Grids::new(t, VelocityGrid::new(1, 2.0, 41).unwrap()).unwrap();
        let sol = hard_bellman(&LagrangianSpec::quadratic(1), 0.1, &g, 0.0, &HardBellmanConfig::default()).unwrap();
        assert_eq!(sol.phi.max(), 0.0);
        assert_eq!(sol.residual, 0.0);
    }

    #[test]
    fn hard_bellman_pendulum_and_wrong_value() {
        let g = pendulum_grids(64, 0.2);
        let spec = LagrangianSpec::pendulum();
        let sol = hard_bellman(&spec, 0.2, &g, -1.0, &HardBellmanConfig::default()).unwrap();
        assert!(sol.residual <= 1e-9);
        assert_eq!(sol.phi.values()[0], 0.0);
        assert!(subaction_violation(&spec, 0.2, &g, &sol.phi, -1.0).unwrap() <= 1e-9);
        match hard_bellman(&spec, 0.2, &g, -0.9, &HardBellmanConfig::default()) {
            Err(Error::NoConvergence { drift, .. }) => assert!((drift.abs() - 0.1 * 0.2).abs() < 1e-9, "{drift}"),
            other => panic!("expected drift failure, got {other:?}"),
        }
    }

    #[test]
    fn kink_detection_on_tent() {
        let t = TorusGrid::new(1, 64).unwrap();
        let f = ScalarField::from_fn(t, |x| 0.5 - (x[0] - 0.5).abs());
        let g = grad_phi0(&f, 0.5);
        assert!(g.is_kink(32) && g.is_kink(0));
        assert!(!g.is_kink(16));
        assert!((g.at(16)[0] - 1.0).abs() < 1e-12);
        let spec = LagrangianSpec::quadratic(1);
        assert_eq!(rate_i(&spec, &g, 0.0, &[0.5], &[0.0]), f64::INFINITY);
    }

    #[test]
    fn schedule_preconditions() {
        let g = pendulum_grids(16, 0.2);
        let spec = LagrangianSpec::quadratic(1);
        let cfg = SolverConfig::default();
        assert!(matches!(
            continue_in_h(&spec, &[(0.1, 0.05)], &g, &cfg),
            Err(Error::PreconditionFailed(_))
        ));
        assert!(matches!(
            continue_in_epsilon(&spec, 0.2, &[0.05, 0.1], &g, &cfg),
            Err(Error::PreconditionFailed(_))
        ));
    }

    #[test]
    fn aubry_projection_picks_minimum() {
        let t = TorusGrid::new(1, 16).unwrap();
        let a = ScalarField::from_fn(t, |x| (PI * x[0]).sin().powi(2));
        let z = ScalarField::constant(t, 0.0);
        assert_eq!(aubry_projection(&a, &z, 1e-3), vec![0]);
        assert_eq!(aubry_projection(&z, &z, 1e-3).len(), 16);
    }
}
