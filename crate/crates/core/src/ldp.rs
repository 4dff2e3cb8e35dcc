//! Large-deviation checks: scaled log-masses of phase-space boxes along
//! schedules, compared with infima of the rate functions.

use serde::{Deserialize, Serialize};

use crate::ep_solver::{BellmanPlan, Direction, EpSolution, BOUNDARY_RATIO};
use crate::error::{Error, Result};
use crate::grid::{log_sum_exp, Density, Grids, TorusGrid, VelocityGrid};
use crate::limits::{
    aubry_projection, critical_hard_bellman, fit_epsilon_model, grad_phi0, kink_threshold, rate_i, rate_i_h,
    summarize, EpsilonFit, GradientField, HardBellmanConfig,
};
use crate::measure::density_from_plan;
use crate::problem::LagrangianSpec;

/// Number of trailing schedule points used by the log-mass extrapolation.
pub const LDP_WINDOW: usize = 4;

/// Product of one interval per axis in `x` and in `v`.
///
/// `x` intervals are read modulo 1 and may straddle 0, e.g. `(-0.05, 0.05)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseBox {
    pub x: Vec<(f64, f64)>,
    pub v: Vec<(f64, f64)>,
    #[serde(default = "default_closed")]
    pub closed: bool,
}

fn default_closed() -> bool {
    true
}

impl PhaseBox {
    pub fn new(x: Vec<(f64, f64)>, v: Vec<(f64, f64)>, closed: bool) -> Result<Self> {
        if x.len() != v.len() || x.is_empty() {
            return Err(Error::InvalidInput("box needs one x and one v interval per axis".into()));
        }
        for &(lo, hi) in x.iter().chain(&v) {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidInput(format!("empty interval ({lo}, {hi})")));
            }
        }
        if x.iter().any(|(lo, hi)| hi - lo > 1.0) {
            return Err(Error::InvalidInput("x interval longer than the torus".into()));
        }
        Ok(Self { x, v, closed })
    }

    /// `𝕋^N × v`
    pub fn full_torus(v: Vec<(f64, f64)>, closed: bool) -> Result<Self> {
        let x = vec![(0.0, 1.0); v.len()];
        Self::new(x, v, closed)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    fn check(&self, velocity: &VelocityGrid) -> Result<()> {
        if self.dim() != velocity.dim() {
            return Err(Error::InvalidInput("box and grid dimensions differ".into()));
        }
        let r = velocity.cutoff();
        if self.v.iter().any(|&(lo, hi)| lo < -r - 1e-12 || hi > r + 1e-12) {
            return Err(Error::InvalidInput(format!("velocity interval outside [-{r}, {r}]")));
        }
        Ok(())
    }

    /// Fraction of the torus cell around `node` inside the box's x-projection.
    fn x_weight(&self, torus: &TorusGrid, node: usize) -> f64 {
        let dx = torus.spacing();
        torus
            .point(node)
            .iter()
            .zip(&self.x)
            .map(|(&c, &(lo, hi))| {
                (-1..=1)
                    .map(|k| overlap(c - 0.5 * dx, c + 0.5 * dx, lo + k as f64, hi + k as f64))
                    .sum::<f64>()
                    / dx
            })
            .product()
    }

    fn v_weight(&self, velocity: &VelocityGrid, node: usize) -> f64 {
        let dv = velocity.spacing();
        velocity
            .velocity(node)
            .iter()
            .zip(&self.v)
            .map(|(&c, &(lo, hi))| overlap(c - 0.5 * dv, c + 0.5 * dv, lo, hi) / dv)
            .product()
    }

    /// Whether torus point `x` lies in the closed x-projection.
    pub fn contains_x(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.x)
            .all(|(&p, &(lo, hi))| (p - lo).rem_euclid(1.0) <= hi - lo + 1e-12)
    }

    /// Euclidean distance in `𝕋^N × ℝ^N` from `(x, v)` to the box.
    pub fn distance(&self, x: &[f64], v: &[f64]) -> f64 {
        let mut d2 = 0.0;
        for (&p, &(lo, hi)) in x.iter().zip(&self.x) {
            let t = (p - lo).rem_euclid(1.0);
            let len = hi - lo;
            let gap = if t <= len { 0.0 } else { (t - len).min(1.0 - t) };
            d2 += gap * gap;
        }
        for (&w, &(lo, hi)) in v.iter().zip(&self.v) {
            let gap = (lo - w).max(w - hi).max(0.0);
            d2 += gap * gap;
        }
        d2.sqrt()
    }
}

fn overlap(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    (b.min(hi) - a.max(lo)).max(0.0)
}

/// Finite union of pairwise disjoint boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSet {
    pub boxes: Vec<PhaseBox>,
}

impl From<PhaseBox> for PhaseSet {
    fn from(b: PhaseBox) -> Self {
        Self { boxes: vec![b] }
    }
}

impl PhaseSet {
    pub fn closed(&self) -> bool {
        self.boxes.iter().all(|b| b.closed)
    }

    fn weight(&self, torus: &TorusGrid, velocity: &VelocityGrid, x: usize, v: usize) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.x_weight(torus, x) * b.v_weight(velocity, v))
            .sum()
    }

    /// Smallest distance from `(x, v)` to any box.
    pub fn distance(&self, x: &[f64], v: &[f64]) -> f64 {
        self.boxes.iter().map(|b| b.distance(x, v)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains_x(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains_x(x))
    }
}

/// `ln μ(A)` with boundary cells weighted by their overlap fraction.
pub fn log_measure_of_box(mu: &Density, set: &PhaseSet) -> Result<f64> {
    for b in &set.boxes {
        b.check(mu.velocity())?;
    }
    let (torus, velocity) = (*mu.torus(), mu.velocity().clone());
    Ok(mu.log_weighted_mass(|x, v| set.weight(&torus, &velocity, x, v)))
}

/// `μ(A)`; underflows to zero for exponentially small sets, use
/// [`log_measure_of_box`] there.
pub fn measure_of_box(mu: &Density, set: &PhaseSet) -> Result<f64> {
    Ok(log_measure_of_box(mu, set)?.exp())
}

/// Which limit theorem a report checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    FixedH,
    Joint,
    AwayFromAubry,
}

/// Controls shared by the three regimes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdpOptions {
    /// Slack added to `2 · fit residual` when comparing limits with bounds.
    pub tolerance: f64,
    /// Tolerance of the projected Aubry set, applied to `(φ + φ̄)/h` at the
    /// last schedule point.
    pub aubry_tolerance: f64,
    /// Semiconcavity bound `C̄` for the kink threshold of `∇φ_0`.
    pub semiconcavity_bound: f64,
}

impl Default for LdpOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-2,
            aubry_tolerance: 1e-2,
            semiconcavity_bound: 1.0,
        }
    }
}

/// Scaled log-masses along a schedule and their comparison with the bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LdpReport {
    pub regime: Regime,
    pub schedule: Vec<(f64, f64)>,
    pub scaled_log_masses: Vec<f64>,
    /// Schedule points whose box mass underflowed.
    pub dropped: Vec<(f64, f64)>,
    pub fit: EpsilonFit,
    pub limit: f64,
    /// `-inf_A` of the rate function (the closed-set upper bound).
    pub bound: f64,
    /// Lower bound `-inf_{A₁} I` of the joint regime.
    pub lower_bound: Option<f64>,
    pub closed: bool,
    pub slack: f64,
    pub pass: bool,
}

fn scaled_log_masses(
    spec: &LagrangianSpec,
    grids: &Grids,
    solutions: &[EpSolution],
    set: &PhaseSet,
    scale: impl Fn(&EpSolution) -> f64,
) -> Result<(Vec<(f64, f64)>, Vec<f64>, Vec<(f64, f64)>)> {
    let mut kept = Vec::new();
    let mut values = Vec::new();
    let mut dropped = Vec::new();
    for sol in solutions {
        let plan = BellmanPlan::new(spec, sol.h, grids, Direction::Forward)?;
        let mu = density_from_plan(sol, &plan)?;
        let log_mass = log_measure_of_box(&mu, set)?;
        if log_mass.is_finite() {
            kept.push((sol.epsilon, sol.h));
            values.push(scale(sol) * log_mass);
        } else {
            dropped.push((sol.epsilon, sol.h));
        }
    }
    if kept.is_empty() {
        return Err(Error::MassUnderflow {
            epsilon: solutions.last().map_or(f64::NAN, |s| s.epsilon),
        });
    }
    Ok((kept, values, dropped))
}

#[allow(clippy::too_many_arguments)]
fn report(
    regime: Regime,
    schedule: Vec<(f64, f64)>,
    values: Vec<f64>,
    dropped: Vec<(f64, f64)>,
    bound: f64,
    lower_bound: Option<f64>,
    closed: bool,
    options: &LdpOptions,
) -> Result<LdpReport> {
    let eps: Vec<f64> = schedule.iter().map(|p| p.0).collect();
    let fit = fit_epsilon_model(&eps, &values, LDP_WINDOW)?;
    let slack = options.tolerance + 2.0 * fit.residual;
    let limit = fit.limit;
    let pass = match (regime, lower_bound) {
        (Regime::Joint, Some(lower)) => limit <= bound + slack && limit >= lower - slack,
        _ if closed => limit <= bound + slack,
        _ => limit >= bound - slack,
    };
    Ok(LdpReport {
        regime,
        schedule,
        scaled_log_masses: values,
        dropped,
        fit,
        limit,
        bound,
        lower_bound,
        closed,
        slack,
        pass,
    })
}

/// Sample points of a box per axis: interior grid nodes plus both ends.
fn axis_samples(lo: f64, hi: f64, nodes: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut s = vec![lo, hi];
    s.extend(nodes.filter(|&c| c > lo && c < hi));
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

/// Infimum of `f` over the box: minimum over node samples followed by a
/// three-point parabolic refinement around the best sample, per axis.
pub fn box_infimum(b: &PhaseBox, torus: &TorusGrid, velocity: &VelocityGrid, f: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let dim = b.dim();
    let mx = torus.points_per_axis();
    let mv = velocity.points_per_axis();
    let (dx, dv) = (torus.spacing(), velocity.spacing());
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(2 * dim);
    for &(lo, hi) in &b.x {
        // torus nodes lifted next to the interval
        let nodes = (0..mx).flat_map(|i| (-1..=1).map(move |k| i as f64 * dx + k as f64));
        axes.push(axis_samples(lo, hi, nodes));
    }
    for &(lo, hi) in &b.v {
        let center = (mv - 1) as f64 / 2.0;
        let nodes = (0..mv).map(move |j| (j as f64 - center) * dv);
        axes.push(axis_samples(lo, hi, nodes));
    }
    let eval = |p: &[f64]| f(&p[..dim], &p[dim..]);
    let total: usize = axes.iter().map(Vec::len).product();
    let mut best = f64::INFINITY;
    let mut best_point = vec![0.0; 2 * dim];
    let mut point = vec![0.0; 2 * dim];
    for flat in 0..total {
        let mut rest = flat;
        for (a, samples) in axes.iter().enumerate().rev() {
            point[a] = samples[rest % samples.len()];
            rest /= samples.len();
        }
        let value = eval(&point);
        if value < best {
            best = value;
            best_point.copy_from_slice(&point);
        }
    }
    if !best.is_finite() {
        return best;
    }
    let bounds: Vec<(f64, f64)> = b.x.iter().chain(&b.v).copied().collect();
    for (a, &(lo, hi)) in bounds.iter().enumerate() {
        let step = if a < dim { dx } else { dv };
        let c = best_point[a];
        if c - step < lo || c + step > hi {
            continue;
        }
        let mut probe = best_point.clone();
        probe[a] = c - step;
        let fm = eval(&probe);
        probe[a] = c + step;
        let fp = eval(&probe);
        let curvature = fp - 2.0 * best + fm;
        if curvature > 0.0 && fm.is_finite() && fp.is_finite() {
            probe[a] = c - 0.5 * step * (fp - fm) / curvature;
            best = best.min(eval(&probe));
        }
    }
    best
}

fn set_infimum(set: &PhaseSet, grids: &Grids, f: impl Fn(&[f64], &[f64]) -> f64 + Copy) -> f64 {
    set.boxes
        .iter()
        .map(|b| box_infimum(b, &grids.torus, &grids.velocity, f))
        .fold(f64::INFINITY, f64::min)
}

/// Fixed `h`: `ε ln μ_{ε,h}(A)` against `-inf_A I_h`.
pub fn ldp_fixed_h(
    spec: &LagrangianSpec,
    grids: &Grids,
    solutions: &[EpSolution],
    set: &PhaseSet,
    options: &LdpOptions,
) -> Result<LdpReport> {
    let h = common_h(solutions)?;
    let schedule: Vec<(f64, f64)> = solutions.iter().map(|s| (s.epsilon, s.h)).collect();
    let hbar_guess = summarize(&schedule, solutions.to_vec())?.limit;
    let hard = critical_hard_bellman(spec, h, grids, hbar_guess, &HardBellmanConfig::default())?;
    let bound = -set_infimum(set, grids, |x, v| rate_i_h(&hard.phi, &hard.phibar, spec, h, hard.hbar, x, v));
    let (kept, values, dropped) = scaled_log_masses(spec, grids, solutions, set, |s| s.epsilon)?;
    report(Regime::FixedH, kept, values, dropped, bound, None, set.closed(), options)
}

fn common_h(solutions: &[EpSolution]) -> Result<f64> {
    let h = solutions
        .first()
        .ok_or_else(|| Error::InvalidInput("empty schedule".into()))?
        .h;
    if solutions.iter().any(|s| s.h != h) {
        return Err(Error::PreconditionFailed("fixed-h regime needs a constant time step".into()));
    }
    Ok(h)
}

/// Limit objects of a coupled schedule used by the joint and away regimes.
#[derive(Clone, Debug)]
pub struct JointLimit {
    pub hbar0: f64,
    pub gradient: GradientField,
    pub aubry: Vec<usize>,
    /// `φ_0 + φ̄_0` shifted to minimum zero.
    pub barrier: Vec<f64>,
}

impl JointLimit {
    pub fn from_solutions(solutions: &[EpSolution], options: &LdpOptions) -> Result<Self> {
        let schedule: Vec<(f64, f64)> = solutions.iter().map(|s| (s.epsilon, s.h)).collect();
        let cont = summarize(&schedule, solutions.to_vec())?;
        let (phi, phibar) = cont.fields();
        let grid = *phi.grid();
        let h = cont.terminal.h;
        let sum: Vec<f64> = phi.values().iter().zip(phibar.values()).map(|(a, b)| a + b).collect();
        let min = sum.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            hbar0: cont.limit,
            gradient: grad_phi0(phi, kink_threshold(options.semiconcavity_bound, &grid)),
            aubry: aubry_projection(&phi.scaled(1.0 / h), &phibar.scaled(1.0 / h), options.aubry_tolerance),
            barrier: sum.iter().map(|s| s - min).collect(),
        })
    }
}

/// Joint limit: `ε ln μ(A)` between `-inf_{A₁} I` and `-inf_A I`.
pub fn ldp_joint(
    spec: &LagrangianSpec,
    grids: &Grids,
    solutions: &[EpSolution],
    set: &PhaseSet,
    options: &LdpOptions,
) -> Result<LdpReport> {
    let lim = JointLimit::from_solutions(solutions, options)?;
    let torus = grids.torus;
    if !lim.aubry.iter().any(|&n| set.contains_x(&torus.point(n))) {
        return Err(Error::PreconditionFailed("x-projection of the box misses the Aubry set".into()));
    }
    // support: Aubry nodes paired with their rate-minimizing velocity
    let rate = |x: &[f64], v: &[f64]| rate_i(spec, &lim.gradient, lim.hbar0, x, v);
    let clearance = lim
        .aubry
        .iter()
        .map(|&n| {
            let x = torus.point(n);
            let v = (0..grids.velocity.len())
                .min_by(|&a, &b| rate(&x, grids.velocity.velocity(a)).total_cmp(&rate(&x, grids.velocity.velocity(b))))
                .expect("velocity grid is nonempty");
            set.distance(&x, grids.velocity.velocity(v))
        })
        .fold(f64::INFINITY, f64::min);
    if clearance < grids.velocity.spacing() {
        return Err(Error::PreconditionFailed(format!(
            "box is within {clearance:.3e} of the support of the Mather measure"
        )));
    }
    let upper = -set_infimum(set, grids, rate);
    let aubry_x: Vec<Vec<f64>> = lim.aubry.iter().map(|&n| torus.point(n)).collect();
    let on_aubry = |x: &[f64], v: &[f64]| {
        let node = torus.nearest(x);
        if lim.aubry.contains(&node) {
            rate(x, v)
        } else {
            f64::INFINITY
        }
    };
    // A₁ is A restricted to Aubry columns: sample those columns directly.
    let mut lower = f64::NEG_INFINITY;
    for b in &set.boxes {
        for x in aubry_x.iter().filter(|x| b.contains_x(x)) {
            let column = PhaseBox {
                x: x.iter().map(|&c| (c, c + 1e-12)).collect(),
                v: b.v.clone(),
                closed: b.closed,
            };
            lower = lower.max(-box_infimum(&column, &torus, &grids.velocity, on_aubry));
        }
    }
    let (kept, values, dropped) = scaled_log_masses(spec, grids, solutions, set, |s| s.epsilon)?;
    report(Regime::Joint, kept, values, dropped, upper, Some(lower), set.closed(), options)
}

/// Away from the Aubry set: `εh ln μ(A)` against `-inf_{π₁A} (φ_0 + φ̄_0)`.
pub fn ldp_away(
    spec: &LagrangianSpec,
    grids: &Grids,
    solutions: &[EpSolution],
    set: &PhaseSet,
    options: &LdpOptions,
) -> Result<LdpReport> {
    let lim = JointLimit::from_solutions(solutions, options)?;
    let torus = grids.torus;
    if lim.aubry.iter().any(|&n| set.contains_x(&torus.point(n))) {
        return Err(Error::PreconditionFailed("x-projection of the box meets the Aubry set".into()));
    }
    let barrier = crate::grid::ScalarField::new(torus, lim.barrier.clone())?;
    let bound = -set_infimum(set, grids, |x, _| barrier.interp(x));
    let (kept, values, dropped) = scaled_log_masses(spec, grids, solutions, set, |s| s.epsilon * s.h)?;
    report(Regime::AwayFromAubry, kept, values, dropped, bound, None, set.closed(), options)
}

/// Varadhan check for velocity-only Lagrangians.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VaradhanReport {
    pub epsilons: Vec<f64>,
    pub values: Vec<f64>,
    pub fit: EpsilonFit,
    /// Discrete `sup_v (p·v - I(v))` over the velocity grid.
    pub target: f64,
}

/// `ε ln ∫ exp(p·v/ε) dμ_{ε,h}` along the schedule against `sup_v (p·v - I(v))`.
pub fn varadhan_check(
    spec: &LagrangianSpec,
    grids: &Grids,
    solutions: &[EpSolution],
    p: &[f64],
) -> Result<VaradhanReport> {
    if !spec.is_velocity_only() {
        return Err(Error::PreconditionFailed("Varadhan check needs a velocity-only Lagrangian".into()));
    }
    if p.len() != grids.velocity.dim() {
        return Err(Error::InvalidInput("tilt dimension differs from the velocity grid".into()));
    }
    let origin = vec![0.0; grids.torus.dim()];
    let dot = |v: &[f64]| p.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let lagrangian: Vec<f64> = (0..grids.velocity.len())
        .map(|j| spec.eval(&origin, grids.velocity.velocity(j)))
        .collect();
    let hbar0 = lagrangian.iter().copied().fold(f64::INFINITY, f64::min);
    let target = (0..grids.velocity.len())
        .map(|j| dot(grids.velocity.velocity(j)) - (lagrangian[j] - hbar0))
        .fold(f64::NEG_INFINITY, f64::max);
    let nv = grids.velocity.len();
    let mut epsilons = Vec::new();
    let mut values = Vec::new();
    for sol in solutions {
        let plan = BellmanPlan::new(spec, sol.h, grids, Direction::Forward)?;
        let mu = density_from_plan(sol, &plan)?;
        let logs = mu.log_values();
        let terms: Vec<f64> = (0..logs.len())
            .map(|k| logs[k] + dot(grids.velocity.velocity(k % nv)) / sol.epsilon)
            .collect();
        let peak = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let edge = (0..terms.len())
            .filter(|&k| grids.velocity.on_boundary(k % nv))
            .map(|k| terms[k])
            .fold(f64::NEG_INFINITY, f64::max);
        if edge - peak > BOUNDARY_RATIO.ln() {
            return Err(Error::CutoffTooSmall {
                x: origin.clone(),
                ratio: (edge - peak).exp(),
            });
        }
        epsilons.push(sol.epsilon);
        values.push(sol.epsilon * (log_sum_exp(&terms) + mu.cell_volume().ln()));
    }
    let fit = fit_epsilon_model(&epsilons, &values, LDP_WINDOW)?;
    Ok(VaradhanReport {
        epsilons,
        values,
        fit,
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_density(eps: f64, mv: usize, r: f64) -> Density {
        let t = TorusGrid::new(1, 8).unwrap();
        let v = VelocityGrid::new(1, r, mv).unwrap();
        let norm = (2.0 * std::f64::consts::PI * eps).sqrt();
        let logs: Vec<f64> = (0..t.len() * v.len())
            .map(|k| {
                let w = v.velocity(k % v.len())[0];
                -w * w / (2.0 * eps) - norm.ln()
            })
            .collect();
        Density::from_log_values(t, v, logs).unwrap()
    }

    #[test]
    fn full_domain_has_unit_mass() {
        let mu = gaussian_density(0.01, 401, 1.0);
        let all: PhaseSet = PhaseBox::full_torus(vec![(-1.0, 1.0)], true).unwrap().into();
        assert!((measure_of_box(&mu, &all).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn disjoint_boxes_add() {
        let mu = gaussian_density(0.05, 201, 1.0);
        let a = PhaseBox::new(vec![(0.1, 0.4)], vec![(0.0, 0.3)], true).unwrap();
        let b = PhaseBox::new(vec![(-0.2, 0.1)], vec![(0.3, 0.7)], true).unwrap();
        let both = PhaseSet {
            boxes: vec![a.clone(), b.clone()],
        };
        let sum = measure_of_box(&mu, &a.into()).unwrap() + measure_of_box(&mu, &b.into()).unwrap();
        assert!((measure_of_box(&mu, &both).unwrap() - sum).abs() < 1e-14);
    }

    #[test]
    fn wrapped_interval_weights() {
        let t = TorusGrid::new(1, 10).unwrap();
        let b = PhaseBox::new(vec![(-0.05, 0.15)], vec![(0.0, 1.0)], true).unwrap();
        let w: Vec<f64> = (0..10).map(|i| b.x_weight(&t, i)).collect();
        assert!((w[0] - 1.0).abs() < 1e-12 && (w[1] - 1.0).abs() < 1e-12);
        assert!(w[2].abs() < 1e-12 && w[9].abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn velocity_interval_outside_cutoff_rejected() {
        let mu = gaussian_density(0.05, 21, 1.0);
        let b = PhaseBox::full_torus(vec![(0.5, 1.5)], true).unwrap();
        assert!(matches!(log_measure_of_box(&mu, &b.into()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn box_infimum_finds_interior_minimum() {
        let t = TorusGrid::new(1, 16).unwrap();
        let v = VelocityGrid::new(1, 2.0, 21).unwrap();
        let b = PhaseBox::full_torus(vec![(-1.0, 1.0)], true).unwrap();
        let m = box_infimum(&b, &t, &v, |_, w| (w[0] - 0.33).powi(2) + 1.0);
        assert!((m - 1.0).abs() < 1e-12);
        let b = PhaseBox::full_torus(vec![(0.5, 1.0)], true).unwrap();
        assert!((box_infimum(&b, &t, &v, |_, w| w[0] * w[0] / 2.0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn distance_to_box() {
        let b = PhaseBox::new(vec![(0.9, 1.1)], vec![(0.4, 0.6)], true).unwrap();
        assert!((b.distance(&[0.0], &[0.0]) - 0.4).abs() < 1e-12);
        assert!((b.distance(&[0.5], &[0.5]) - 0.4).abs() < 1e-12);
    }
}
