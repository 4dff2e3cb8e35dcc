//! Soft Bellman operators `G`, `Ḡ`, the gauge-fixed fixed-point iteration for
//! the eigen-constant `λ`, the Sinkhorn-style normalization of the pair
//! `(φ, φ̄)`, and the Hopf–Cole / Perron eigenvalue cross-check.
//!
//! All exponential sums are evaluated in the log domain with a per-node
//! minimum shift: exponents scale like `1/(εh)` and overflow otherwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{log_sum_exp, Grids, ScalarField, TorusGrid, VelocityGrid};
use crate::problem::LagrangianSpec;

/// Integrand ratio (boundary to peak) above which the velocity box is too small.
pub const BOUNDARY_RATIO: f64 = 1e-12;

/// Which of the two soft Bellman operators a plan discretizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// `G[φ](x) = -εh ln ∫ exp(-(hL(x,v) + φ(x+hv))/(εh)) dv`
    Forward,
    /// `Ḡ[φ̄](x) = -εh ln ∫ exp(-(hL(x-hv,v) + φ̄(x-hv))/(εh)) dv`
    Backward,
}

/// Precomputed costs and interpolation stencils for one `(L, h, grids)`.
///
/// Row `x` holds, for each velocity node, the cost `hL` and the `2^N`
/// multilinear corners of the transported point.
#[derive(Clone, Debug)]
pub struct BellmanPlan {
    torus: TorusGrid,
    velocity: VelocityGrid,
    h: f64,
    corners: usize,
    cost: Vec<f64>,
    indices: Vec<u32>,
    weights: Vec<f64>,
    boundary: Vec<bool>,
}

impl BellmanPlan {
    pub fn new(spec: &LagrangianSpec, h: f64, grids: &Grids, direction: Direction) -> Result<Self> {
        check_grids(spec, grids)?;
        match direction {
            Direction::Forward => Self::from_fn(grids, h, |x, v| h * spec.eval(x, v), |x, v, y| {
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi = x[i] + h * v[i];
                }
            }),
            Direction::Backward => Self::from_fn(
                grids,
                h,
                |x, v| {
                    let back: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
                    h * spec.eval(&back, v)
                },
                |x, v, y| {
                    for (i, yi) in y.iter_mut().enumerate() {
                        *yi = x[i] - h * v[i];
                    }
                },
            ),
        }
    }

    /// Plan for an arbitrary per-step cost and transport map.
    pub fn from_fn(
        grids: &Grids,
        h: f64,
        cost: impl Fn(&[f64], &[f64]) -> f64 + Sync,
        target: impl Fn(&[f64], &[f64], &mut [f64]) + Sync,
    ) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {h}")));
        }
        let torus = grids.torus;
        let velocity = grids.velocity.clone();
        let dim = torus.dim();
        let nv = velocity.len();
        let corners = 1usize << dim;
        let rows: Vec<(Vec<f64>, Vec<u32>, Vec<f64>)> = (0..torus.len())
            .into_par_iter()
            .map(|xi| {
                let x = torus.point(xi);
                let mut c = Vec::with_capacity(nv);
                let mut idx = Vec::with_capacity(nv * corners);
                let mut w = Vec::with_capacity(nv * corners);
                let mut y = vec![0.0; dim];
                for vi in 0..nv {
                    let v = velocity.velocity(vi);
                    c.push(cost(&x, v));
                    target(&x, v, &mut y);
                    fixed_corners(&torus, &y, &mut idx, &mut w);
                }
                (c, idx, w)
            })
            .collect();
        let mut plan = Self {
            torus,
            boundary: (0..nv).map(|j| velocity.on_boundary(j)).collect(),
            velocity,
            h,
            corners,
            cost: Vec::with_capacity(torus.len() * nv),
            indices: Vec::with_capacity(torus.len() * nv * corners),
            weights: Vec::with_capacity(torus.len() * nv * corners),
        };
        for (c, i, w) in rows {
            plan.cost.extend(c);
            plan.indices.extend(i);
            plan.weights.extend(w);
        }
        Ok(plan)
    }

    pub fn torus(&self) -> &TorusGrid {
        &self.torus
    }

    pub fn velocity(&self) -> &VelocityGrid {
        &self.velocity
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `cost(x, v) + interp(φ, target(x, v))` for every velocity node of row `xi`.
    pub fn row_exponents(&self, xi: usize, phi: &[f64], out: &mut Vec<f64>) {
        let nv = self.velocity.len();
        out.clear();
        let base = xi * nv;
        for vi in 0..nv {
            let k = (base + vi) * self.corners;
            let mut interp = 0.0;
            for c in 0..self.corners {
                interp += self.weights[k + c] * phi[self.indices[k + c] as usize];
            }
            out.push(self.cost[base + vi] + interp);
        }
    }

    /// Cost `hL` at row `xi`, velocity `vi`.
    pub fn cost(&self, xi: usize, vi: usize) -> f64 {
        self.cost[xi * self.velocity.len() + vi]
    }

    /// Interpolated value of `phi` at the transported point.
    pub fn transported(&self, xi: usize, vi: usize, phi: &[f64]) -> f64 {
        let k = (xi * self.velocity.len() + vi) * self.corners;
        (0..self.corners)
            .map(|c| self.weights[k + c] * phi[self.indices[k + c] as usize])
            .sum()
    }

    /// Soft-min operator at temperature `εh`.
    pub fn apply_soft(&self, phi: &ScalarField, eps: f64, log_shift: bool) -> Result<ScalarField> {
        let temp = eps * self.h;
        if !(temp > 0.0) {
            return Err(Error::InvalidInput("epsilon must be positive".into()));
        }
        let ln_dv = self.velocity.cell_volume().ln();
        let phi_values = phi.values();
        let values: Result<Vec<f64>> = (0..self.torus.len())
            .into_par_iter()
            .map_init(Vec::new, |buf, xi| {
                self.row_exponents(xi, phi_values, buf);
                let m = buf.iter().copied().fold(f64::INFINITY, f64::min);
                let mut edge = 0.0f64;
                for (vi, f) in buf.iter().enumerate() {
                    if self.boundary[vi] {
                        edge = edge.max((-(f - m) / temp).exp());
                    }
                }
                if edge > BOUNDARY_RATIO {
                    return Err(Error::CutoffTooSmall {
                        x: self.torus.point(xi),
                        ratio: edge,
                    });
                }
                if log_shift {
                    let terms: Vec<f64> = buf.iter().map(|f| -(f - m) / temp).collect();
                    Ok(m - temp * (log_sum_exp(&terms) + ln_dv))
                } else {
                    let s: f64 = buf.iter().map(|f| (-f / temp).exp()).sum();
                    let out = -temp * (s * self.velocity.cell_volume()).ln();
                    if out.is_finite() {
                        Ok(out)
                    } else {
                        Err(Error::Overflow)
                    }
                }
            })
            .collect();
        ScalarField::new(self.torus, values?)
    }

    /// Hard (min-plus) operator `min_v interp(φ, target) + cost - shift`,
    /// with the argmin velocity index per node.
    pub fn apply_hard(&self, phi: &ScalarField, shift: f64) -> (ScalarField, Vec<usize>) {
        let phi_values = phi.values();
        let (values, argmins): (Vec<f64>, Vec<usize>) = (0..self.torus.len())
            .into_par_iter()
            .map_init(Vec::new, |buf, xi| {
                self.row_exponents(xi, phi_values, buf);
                let (best, value) = buf
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (i, &f)| if f < acc.1 { (i, f) } else { acc });
                (value - shift, best)
            })
            .unzip();
        (
            ScalarField::new(self.torus, values).expect("finite min-plus values"),
            argmins,
        )
    }
}

/// Pushes exactly `2^N` corners (zero weights included) for point `y`.
fn fixed_corners(grid: &TorusGrid, y: &[f64], idx: &mut Vec<u32>, w: &mut Vec<f64>) {
    let m = grid.points_per_axis();
    let mf = m as f64;
    let dim = grid.dim();
    let mut base = [0usize; 8];
    let mut frac = [0.0f64; 8];
    for axis in 0..dim {
        let t = (y[axis] * mf).rem_euclid(mf);
        let mut i = t.floor() as usize;
        let mut f = t - i as f64;
        if i >= m {
            i = 0;
            f = 0.0;
        }
        base[axis] = i;
        frac[axis] = f;
    }
    for corner in 0..(1usize << dim) {
        let mut weight = 1.0;
        let mut flat = 0usize;
        for axis in 0..dim {
            let up = (corner >> (dim - 1 - axis)) & 1 == 1;
            let i = if up { (base[axis] + 1) % m } else { base[axis] };
            weight *= if up { frac[axis] } else { 1.0 - frac[axis] };
            flat = flat * m + i;
        }
        idx.push(flat as u32);
        w.push(weight);
    }
}

fn check_grids(spec: &LagrangianSpec, grids: &Grids) -> Result<()> {
    if spec.dimension() != grids.torus.dim() || spec.dimension() != grids.velocity.dim() {
        return Err(Error::InvalidInput("problem and grid dimensions differ".into()));
    }
    Ok(())
}

/// `G[φ]` for a builtin Lagrangian.
pub fn apply_g(spec: &LagrangianSpec, eps: f64, h: f64, phi: &ScalarField, grids: &Grids) -> Result<ScalarField> {
    BellmanPlan::new(spec, h, grids, Direction::Forward)?.apply_soft(phi, eps, true)
}

/// `Ḡ[φ̄]` for a builtin Lagrangian.
pub fn apply_gbar(spec: &LagrangianSpec, eps: f64, h: f64, phibar: &ScalarField, grids: &Grids) -> Result<ScalarField> {
    BellmanPlan::new(spec, h, grids, Direction::Backward)?.apply_soft(phibar, eps, true)
}

/// `G[φ]` for an arbitrary Lagrangian given as a closure.
pub fn apply_g_with(
    lagrangian: impl Fn(&[f64], &[f64]) -> f64 + Sync,
    eps: f64,
    h: f64,
    phi: &ScalarField,
    grids: &Grids,
) -> Result<ScalarField> {
    BellmanPlan::from_fn(grids, h, |x, v| h * lagrangian(x, v), |x, v, y| {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = x[i] + h * v[i];
        }
    })?
    .apply_soft(phi, eps, true)
}

/// Iteration controls for [`solve_pair`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Sup-norm bound on the gauge-fixed update.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub reference_node: usize,
    /// Evaluate exponential sums with the per-node minimum shift.
    pub log_shift: bool,
    /// Allowed gap between the forward and backward eigen-constants.
    pub lambda_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 50_000,
            reference_node: 0,
            log_shift: true,
            lambda_tolerance: 1e-4,
        }
    }
}

/// Fixed-point pair `(φ, φ̄)` and eigen-constant `λ` at one `(ε, h)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpSolution {
    pub epsilon: f64,
    pub h: f64,
    pub phi: ScalarField,
    pub phibar: ScalarField,
    /// Eigen-constant of the forward operator.
    pub lambda: f64,
    /// Eigen-constant of the backward operator.
    pub lambda_backward: f64,
    pub iterations: usize,
    pub final_residual: f64,
    /// Gauge-fixed update norms of the forward iteration.
    pub residual_history: Vec<f64>,
    pub reference_node: usize,
}

impl EpSolution {
    /// `λ / h`, the entropy-penalized effective Hamiltonian.
    pub fn effective_hamiltonian(&self) -> f64 {
        self.lambda / self.h
    }
}

/// Result of one gauge-fixed fixed-point iteration.
#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub field: ScalarField,
    pub lambda: f64,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Iterates `φ ← T[φ] - T[φ](x_ref)` until the update is below tolerance,
/// then sets `λ = mean(T[φ] - φ)`.
pub fn fixed_point(plan: &BellmanPlan, eps: f64, start: ScalarField, config: &SolverConfig) -> Result<FixedPoint> {
    let reference = config.reference_node;
    if reference >= plan.torus().len() {
        return Err(Error::InvalidInput("reference node outside the grid".into()));
    }
    let mut phi = start.shifted(-start.values()[reference]);
    let mut history = Vec::new();
    for iteration in 1..=config.max_iterations {
        let image = plan.apply_soft(&phi, eps, config.log_shift)?;
        let next = image.shifted(-image.values()[reference]);
        let residual = next.sup_distance(&phi);
        history.push(residual);
        phi = next;
        if residual <= config.tolerance {
            let image = plan.apply_soft(&phi, eps, config.log_shift)?;
            let diffs: Vec<f64> = image.values().iter().zip(phi.values()).map(|(a, b)| a - b).collect();
            let lambda = crate::grid::pairwise_sum(&diffs) / diffs.len() as f64;
            return Ok(FixedPoint {
                field: phi,
                lambda,
                iterations: iteration,
                residual,
                history,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: config.max_iterations,
        residual: history.last().copied().unwrap_or(f64::NAN),
        drift: f64::NAN,
    })
}

/// Solves both fixed-point equations and normalizes the pair.
pub fn solve_pair(spec: &LagrangianSpec, eps: f64, h: f64, grids: &Grids, config: &SolverConfig) -> Result<EpSolution> {
    solve_pair_from(spec, eps, h, grids, config, None)
}

/// [`solve_pair`] with an optional warm start `(φ, φ̄)`.
pub fn solve_pair_from(
    spec: &LagrangianSpec,
    eps: f64,
    h: f64,
    grids: &Grids,
    config: &SolverConfig,
    warm: Option<(&ScalarField, &ScalarField)>,
) -> Result<EpSolution> {
    if !(eps > 0.0 && h > 0.0) {
        return Err(Error::InvalidInput(format!("need epsilon, h > 0 (got {eps}, {h})")));
    }
    let zero = ScalarField::constant(grids.torus, 0.0);
    let (start, start_bar) = match warm {
        Some((a, b)) => (a.clone(), b.clone()),
        None => (zero.clone(), zero),
    };
    let forward = BellmanPlan::new(spec, h, grids, Direction::Forward)?;
    let backward = BellmanPlan::new(spec, h, grids, Direction::Backward)?;
    let fwd = fixed_point(&forward, eps, start, config)?;
    let bwd = fixed_point(&backward, eps, start_bar, config)?;
    if (fwd.lambda - bwd.lambda).abs() > config.lambda_tolerance.max(10.0 * config.tolerance) {
        return Err(Error::LambdaMismatch {
            forward: fwd.lambda,
            backward: bwd.lambda,
        });
    }
    let (phi, phibar) = normalize_pair(&fwd.field, &bwd.field, eps, h, config.reference_node);
    Ok(EpSolution {
        epsilon: eps,
        h,
        phi,
        phibar,
        lambda: fwd.lambda,
        lambda_backward: bwd.lambda,
        iterations: fwd.iterations + bwd.iterations,
        final_residual: fwd.residual.max(bwd.residual),
        residual_history: fwd.history,
        reference_node: config.reference_node,
    })
}

/// Gauge `φ(x_ref) = 0` and shift `φ̄` so that `∫ exp(-(φ̄+φ)/(εh)) dx = 1`.
pub fn normalize_pair(
    phi: &ScalarField,
    phibar: &ScalarField,
    eps: f64,
    h: f64,
    reference: usize,
) -> (ScalarField, ScalarField) {
    let phi = phi.shifted(-phi.values()[reference]);
    let c = eps * h * log_theta_integral(&phi, phibar, eps, h);
    (phi, phibar.shifted(c))
}

/// `ln ∫ exp(-(φ̄+φ)/(εh)) dx` by the node rule.
pub fn log_theta_integral(phi: &ScalarField, phibar: &ScalarField, eps: f64, h: f64) -> f64 {
    let temp = eps * h;
    let terms: Vec<f64> = phi
        .values()
        .iter()
        .zip(phibar.values())
        .map(|(a, b)| -(a + b) / temp)
        .collect();
    log_sum_exp(&terms) + phi.grid().cell_volume().ln()
}

/// Dominant eigenvalue of the discretized Hopf–Cole kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerronResult {
    /// `ln` of the dominant eigenvalue.
    pub log_eigenvalue: f64,
    /// `-εh ln(eigenvalue)`.
    pub lambda: f64,
    pub iterations: usize,
}

impl PerronResult {
    pub fn eigenvalue(&self) -> f64 {
        self.log_eigenvalue.exp()
    }
}

/// Builds `K[x, y] = Σ_v Δv exp(-L(x,v)/ε) w(x + hv → y)` and returns its
/// dominant eigenvalue by power iteration. One-dimensional grids only.
pub fn perron_eigenvalue(spec: &LagrangianSpec, eps: f64, h: f64, grids: &Grids) -> Result<PerronResult> {
    check_grids(spec, grids)?;
    perron_with(|x, v| spec.eval(x, v), eps, h, grids)
}

/// [`perron_eigenvalue`] for an arbitrary Lagrangian closure.
pub fn perron_with(
    lagrangian: impl Fn(&[f64], &[f64]) -> f64 + Sync,
    eps: f64,
    h: f64,
    grids: &Grids,
) -> Result<PerronResult> {
    if grids.torus.dim() != 1 {
        return Err(Error::TooLarge(format!(
            "dense kernel for N = {} is not materialized",
            grids.torus.dim()
        )));
    }
    let n = grids.torus.len();
    let plan = BellmanPlan::from_fn(grids, h, &lagrangian, |x, v, y| y[0] = x[0] + h * v[0])?;
    let nv = grids.velocity.len();
    let lmin = (0..n * nv).map(|k| plan.cost[k]).fold(f64::INFINITY, f64::min);
    let dv = grids.velocity.cell_volume();
    let mut kernel = vec![0.0; n * n];
    for x in 0..n {
        for vi in 0..nv {
            let k = x * nv + vi;
            let a = dv * (-(plan.cost[k] - lmin) / eps).exp();
            for c in 0..plan.corners {
                let y = plan.indices[k * plan.corners + c] as usize;
                kernel[x * n + y] += a * plan.weights[k * plan.corners + c];
            }
        }
    }
    let mut f = vec![1.0; n];
    let max_iterations = 200_000;
    for iteration in 1..=max_iterations {
        let g: Vec<f64> = (0..n)
            .map(|x| kernel[x * n..(x + 1) * n].iter().zip(&f).map(|(k, v)| k * v).sum())
            .collect();
        // Collatz–Wielandt bounds on entries that are not negligible.
        let fmax = f.iter().copied().fold(0.0, f64::max);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for (gi, fi) in g.iter().zip(&f) {
            if *fi > 1e-200 * fmax {
                let r = gi / fi;
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        let gmax = g.iter().copied().fold(0.0, f64::max);
        if !(gmax > 0.0 && gmax.is_finite()) {
            return Err(Error::PowerIterationStalled { iterations: iteration });
        }
        f = g.iter().map(|v| v / gmax).collect();
        if hi - lo <= 1e-14 * hi {
            let rho = 0.5 * (lo + hi);
            // plan costs are h L, so undo the shift by lmin / ε with lmin in units of hL
            let log_eigenvalue = rho.ln() - lmin / eps;
            return Ok(PerronResult {
                log_eigenvalue,
                lambda: -eps * h * log_eigenvalue,
                iterations: iteration,
            });
        }
    }
    Err(Error::PowerIterationStalled {
        iterations: max_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VelocityGrid;

    fn grids(m: usize, r: f64, mv: usize) -> Grids {
        Grids::new(TorusGrid::new(1, m).unwrap(), VelocityGrid::new(1, r, mv).unwrap()).unwrap()
    }

    #[test]
    fn quadratic_g_of_zero_matches_gaussian_constant() {
        let g = grids(32, 1.5, 257);
        let zero = ScalarField::constant(g.torus, 0.0);
        let out = apply_g(&LagrangianSpec::quadratic(1), 0.01, 0.1, &zero, &g).unwrap();
        let expected = -0.01 * 0.1 * (2.0 * std::f64::consts::PI * 0.01f64).sqrt().ln();
        for v in out.values() {
            assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
        }
        assert!((expected - 0.001383647).abs() < 1e-9);
        let outbar = apply_gbar(&LagrangianSpec::quadratic(1), 0.01, 0.1, &zero, &g).unwrap();
        assert!(outbar.sup_distance(&out) < 1e-15);
    }

    #[test]
    fn cutoff_guard_fires() {
        let g = grids(16, 0.2, 21);
        let zero = ScalarField::constant(g.torus, 0.0);
        let err = apply_g(&LagrangianSpec::quadratic(1), 0.1, 0.1, &zero, &g).unwrap_err();
        assert!(matches!(err, Error::CutoffTooSmall { .. }));
    }

    #[test]
    fn unshifted_sum_overflows_at_small_temperature() {
        let g = grids(16, 1.5, 101);
        let phi = ScalarField::constant(g.torus, 10.0);
        let plan = BellmanPlan::new(&LagrangianSpec::quadratic(1), 0.1, &g, Direction::Forward).unwrap();
        assert!(matches!(plan.apply_soft(&phi, 0.01, false), Err(Error::Overflow)));
        assert!(plan.apply_soft(&phi, 0.01, true).is_ok());
    }

    #[test]
    fn normalize_examples() {
        let t = TorusGrid::new(1, 16).unwrap();
        let zero = ScalarField::constant(t, 0.0);
        let (p, pb) = normalize_pair(&zero, &zero, 0.05, 0.2, 0);
        assert!(p.sup_distance(&zero) < 1e-15 && pb.sup_distance(&zero) < 1e-12);
        let a = ScalarField::constant(t, 0.3);
        let (_, pb) = normalize_pair(&zero, &a, 0.05, 0.2, 0);
        assert!(pb.sup_distance(&zero) < 1e-12);
    }

    #[test]
    fn perron_rejects_two_dimensions() {
        let g = Grids::new(TorusGrid::new(2, 8).unwrap(), VelocityGrid::new(2, 2.0, 9).unwrap()).unwrap();
        assert!(matches!(
            perron_eigenvalue(&LagrangianSpec::quadratic(2), 0.1, 0.1, &g),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn perron_zero_lagrangian_is_row_sum() {
        let g = grids(16, 1.0, 21);
        let res = perron_with(|_, _| 0.0, 0.1, 0.1, &g).unwrap();
        let row_sum = g.velocity.spacing() * g.velocity.len() as f64;
        assert!((res.eigenvalue() - row_sum).abs() < 1e-12 * row_sum);
    }
}
