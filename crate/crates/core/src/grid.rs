//! Periodic spatial grid, truncated velocity grid, quadrature, multilinear
//! interpolation and the discrete semiconcavity modulus.
//!
//! Torus nodes are `i / M` per axis and are stored row-major (last axis
//! fastest). Velocity nodes are symmetric around zero and always contain
//! `v = 0` because `Mv` is odd.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `{i / M}^N` on the unit torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    m: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, m: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("torus dimension must be positive".into()));
        }
        if m < 4 {
            return Err(Error::InvalidInput(format!("torus grid needs M >= 4, got {m}")));
        }
        Ok(Self { dim, m })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.m
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Number of nodes, `M^N`.
    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of one cell, `Δx^N`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            idx[axis] = rest % self.m;
            rest /= self.m;
        }
        idx
    }

    /// Flat index of an integer multi-index, wrapped periodically.
    pub fn flat_index(&self, idx: &[i64]) -> usize {
        let m = self.m as i64;
        idx.iter()
            .fold(0usize, |acc, &i| acc * self.m + i.rem_euclid(m) as usize)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .map(|i| i as f64 * self.spacing())
            .collect()
    }

    /// Node nearest to `x` (wrapped).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let idx: Vec<i64> = x
            .iter()
            .map(|&xi| (xi * self.m as f64).round() as i64)
            .collect();
        self.flat_index(&idx)
    }

    /// Periodic distance between two points of the unit torus.
    pub fn distance(x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(a, b)| {
                let d = (a - b).rem_euclid(1.0);
                let d = d.min(1.0 - d);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Diameter of the torus `[0,1)^N` with the periodic metric.
    pub fn diameter(&self) -> f64 {
        0.5 * (self.dim as f64).sqrt()
    }
}

/// Truncated velocity grid `[-R, R]^N` with an odd number of nodes per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VelocityGridParams", into = "VelocityGridParams")]
pub struct VelocityGrid {
    dim: usize,
    cutoff: f64,
    mv: usize,
    nodes: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct VelocityGridParams {
    dim: usize,
    cutoff: f64,
    mv: usize,
}

impl TryFrom<VelocityGridParams> for VelocityGrid {
    type Error = Error;
    fn try_from(p: VelocityGridParams) -> Result<Self> {
        Self::new(p.dim, p.cutoff, p.mv)
    }
}

impl From<VelocityGrid> for VelocityGridParams {
    fn from(g: VelocityGrid) -> Self {
        Self {
            dim: g.dim,
            cutoff: g.cutoff,
            mv: g.mv,
        }
    }
}

impl VelocityGrid {
    pub fn new(dim: usize, cutoff: f64, mv: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("velocity dimension must be positive".into()));
        }
        if mv.is_multiple_of(2) || mv < 3 {
            return Err(Error::InvalidInput(format!(
                "velocity grid needs an odd Mv >= 3, got {mv}"
            )));
        }
        if !(cutoff.is_finite() && cutoff > 0.0) {
            return Err(Error::InvalidInput(format!("invalid velocity cutoff {cutoff}")));
        }
        let mut grid = Self {
            dim,
            cutoff,
            mv,
            nodes: Vec::new(),
        };
        grid.nodes = grid.build_nodes();
        Ok(grid)
    }

    /// Velocity grid whose spacing is `q · Δx / h`, so every step `h v` lands
    /// on a torus node. The cutoff is rounded up to a whole number of steps.
    pub fn node_aligned(dim: usize, torus: &TorusGrid, h: f64, q: usize, min_cutoff: f64) -> Result<Self> {
        let dv = q.max(1) as f64 * torus.spacing() / h;
        let half = (min_cutoff / dv).ceil().max(1.0) as usize;
        Self::new(dim, half as f64 * dv, 2 * half + 1)
    }

    fn build_nodes(&self) -> Vec<f64> {
        let center = (self.mv - 1) / 2;
        let dv = self.spacing();
        let per_axis: Vec<f64> = (0..self.mv)
            .map(|j| (j as i64 - center as i64) as f64 * dv)
            .collect();
        let total = self.len();
        let mut nodes = Vec::with_capacity(total * self.dim);
        for flat in 0..total {
            let mut rest = flat;
            let mut v = vec![0.0; self.dim];
            for axis in (0..self.dim).rev() {
                v[axis] = per_axis[rest % self.mv];
                rest /= self.mv;
            }
            nodes.extend(v);
        }
        nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn points_per_axis(&self) -> usize {
        self.mv
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.cutoff / (self.mv - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.mv.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn velocity(&self, flat: usize) -> &[f64] {
        &self.nodes[flat * self.dim..(flat + 1) * self.dim]
    }

    /// True when some component of node `flat` sits on `±R`.
    pub fn on_boundary(&self, flat: usize) -> bool {
        let mut rest = flat;
        for _ in 0..self.dim {
            let j = rest % self.mv;
            if j == 0 || j == self.mv - 1 {
                return true;
            }
            rest /= self.mv;
        }
        false
    }

    /// Per-axis integer index of node `flat`.
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            idx[axis] = rest % self.mv;
            rest /= self.mv;
        }
        idx
    }

    /// Flat index of a per-axis index, `None` when outside the box.
    pub fn flat_index(&self, idx: &[i64]) -> Option<usize> {
        let mut flat = 0usize;
        for &i in idx {
            if i < 0 || i >= self.mv as i64 {
                return None;
            }
            flat = flat * self.mv + i as usize;
        }
        Some(flat)
    }

    /// Index of the node `-v` for node `flat`.
    pub fn mirror(&self, flat: usize) -> usize {
        let idx = self.multi_index(flat);
        idx.iter()
            .fold(0usize, |acc, &i| acc * self.mv + (self.mv - 1 - i))
    }
}

/// A real function sampled on the torus grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("field values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// `max |self - other|`.
    pub fn sup_distance(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Multilinear periodic interpolation; `x` is wrapped modulo 1.
    pub fn interp(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for_each_corner(&self.grid, x, |flat, w| acc += w * self.values[flat]);
        acc
    }

    /// Torus integral by the uniform node rule.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * pairwise_sum(&self.values)
    }
}

/// Visits the `2^N` interpolation corners of `x` with their weights.
pub fn for_each_corner(grid: &TorusGrid, x: &[f64], mut visit: impl FnMut(usize, f64)) {
    let m = grid.points_per_axis();
    let mf = m as f64;
    let dim = grid.dim();
    let mut base = [0usize; 8];
    let mut frac = [0.0f64; 8];
    debug_assert!(dim <= 8);
    for axis in 0..dim {
        let t = (x[axis] * mf).rem_euclid(mf);
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
        let mut w = 1.0;
        let mut flat = 0usize;
        for axis in 0..dim {
            let up = (corner >> (dim - 1 - axis)) & 1 == 1;
            let i = if up { (base[axis] + 1) % m } else { base[axis] };
            w *= if up { frac[axis] } else { 1.0 - frac[axis] };
            flat = flat * m + i;
        }
        if w != 0.0 {
            visit(flat, w);
        }
    }
}

/// Precomputed interpolation stencil: corner indices and weights.
#[derive(Clone, Debug, Default)]
pub struct Stencil {
    pub indices: Vec<u32>,
    pub weights: Vec<f64>,
}

impl Stencil {
    pub fn of(grid: &TorusGrid, x: &[f64]) -> Self {
        let mut s = Stencil::default();
        for_each_corner(grid, x, |i, w| {
            s.indices.push(i as u32);
            s.weights.push(w);
        });
        s
    }

    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.weights)
            .map(|(&i, &w)| w * values[i as usize])
            .sum()
    }
}

/// Probability density on the product grid, stored as log-values so that
/// exponentially small masses stay representable. Index is
/// `x_index * velocity.len() + v_index`.
#[derive(Clone, Debug)]
pub struct Density {
    torus: TorusGrid,
    velocity: VelocityGrid,
    log_values: Vec<f64>,
}

impl Density {
    pub fn from_log_values(torus: TorusGrid, velocity: VelocityGrid, log_values: Vec<f64>) -> Result<Self> {
        if log_values.len() != torus.len() * velocity.len() {
            return Err(Error::InvalidInput("density size does not match grids".into()));
        }
        if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidInput("density log-values must be < +inf".into()));
        }
        Ok(Self {
            torus,
            velocity,
            log_values,
        })
    }

    pub fn from_values(torus: TorusGrid, velocity: VelocityGrid, values: &[f64]) -> Result<Self> {
        if values.iter().any(|&v| v < 0.0 || v.is_nan()) {
            return Err(Error::NegativeDensity);
        }
        let logs = values.iter().map(|v| v.ln()).collect();
        Self::from_log_values(torus, velocity, logs)
    }

    pub fn torus(&self) -> &TorusGrid {
        &self.torus
    }

    pub fn velocity(&self) -> &VelocityGrid {
        &self.velocity
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn value(&self, x: usize, v: usize) -> f64 {
        self.log_values[x * self.velocity.len() + v].exp()
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|l| l.exp()).collect()
    }

    /// Product-grid cell volume `Δx^N Δv^N`.
    pub fn cell_volume(&self) -> f64 {
        self.torus.cell_volume() * self.velocity.cell_volume()
    }

    /// Quadrature of the density over the whole product grid.
    pub fn mass(&self) -> f64 {
        self.integrate(|_, _, _, _| 1.0)
    }

    /// Quadrature of `f(x, v) μ(x, v)` over the product grid.
    pub fn integrate(&self, f: impl Fn(usize, &[f64], usize, &[f64]) -> f64) -> f64 {
        let nv = self.velocity.len();
        let terms: Vec<f64> = (0..self.torus.len())
            .flat_map(|xi| {
                let x = self.torus.point(xi);
                let f = &f;
                (0..nv).map(move |vi| {
                    let mu = self.log_values[xi * nv + vi].exp();
                    if mu == 0.0 {
                        0.0
                    } else {
                        f(xi, &x, vi, self.velocity.velocity(vi)) * mu
                    }
                })
            })
            .collect();
        self.cell_volume() * pairwise_sum(&terms)
    }

    /// Log of `Σ weight(x, v) μ(x, v) Δx^N Δv^N`, computed without
    /// materializing underflowed densities. Zero weights are skipped.
    pub fn log_weighted_mass(&self, weight: impl Fn(usize, usize) -> f64) -> f64 {
        let nv = self.velocity.len();
        let mut terms = Vec::new();
        for xi in 0..self.torus.len() {
            for vi in 0..nv {
                let w = weight(xi, vi);
                if w > 0.0 {
                    terms.push(self.log_values[xi * nv + vi] + w.ln());
                }
            }
        }
        log_sum_exp(&terms) + self.cell_volume().ln()
    }

    /// x-marginal `∫ μ(x, v) dv` as a torus field.
    pub fn x_marginal(&self) -> Vec<f64> {
        let nv = self.velocity.len();
        let dv = self.velocity.cell_volume();
        (0..self.torus.len())
            .map(|xi| {
                let row: Vec<f64> = self.log_values[xi * nv..(xi + 1) * nv]
                    .iter()
                    .map(|l| l.exp())
                    .collect();
                dv * pairwise_sum(&row)
            })
            .collect()
    }
}

/// The torus grid paired with the velocity grid used by the solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub torus: TorusGrid,
    pub velocity: VelocityGrid,
}

impl Grids {
    pub fn new(torus: TorusGrid, velocity: VelocityGrid) -> Result<Self> {
        if torus.dim() != velocity.dim() {
            return Err(Error::InvalidInput("torus and velocity dimensions differ".into()));
        }
        Ok(Self { torus, velocity })
    }

    /// Cutoff `K + 8 sqrt(eps_max)`: the velocity bound `K` plus enough
    /// Gaussian width that the integrand at `±R` is below `e^-32` of its peak.
    pub fn auto_cutoff(velocity_bound: f64, eps_max: f64) -> f64 {
        velocity_bound + 8.0 * eps_max.sqrt()
    }
}

/// Deterministic pairwise (tree) summation with a fixed topology.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// `ln Σ exp(t_i)` with max-shift; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let shifted: Vec<f64> = terms.iter().map(|t| (t - m).exp()).collect();
    m + pairwise_sum(&shifted).ln()
}

/// Rectangle rule: product of spacings times the node sum.
pub fn quadrature(values: &[f64], spacings: &[f64]) -> f64 {
    spacings.iter().product::<f64>() * pairwise_sum(values)
}

/// Maximum over nodes of `(f(x+y) + f(x-y) - 2 f(x)) / |y|^2` with `y` given
/// as an integer number of grid steps per axis.
pub fn second_difference_modulus(field: &ScalarField, steps: &[i64]) -> f64 {
    let grid = field.grid();
    let dx = grid.spacing();
    let y2: f64 = steps.iter().map(|&s| (s as f64 * dx).powi(2)).sum();
    let values = field.values();
    (0..grid.len())
        .map(|flat| {
            let idx: Vec<i64> = grid.multi_index(flat).iter().map(|&i| i as i64).collect();
            let plus: Vec<i64> = idx.iter().zip(steps).map(|(i, s)| i + s).collect();
            let minus: Vec<i64> = idx.iter().zip(steps).map(|(i, s)| i - s).collect();
            (values[grid.flat_index(&plus)] + values[grid.flat_index(&minus)] - 2.0 * values[flat]) / y2
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest second-difference modulus over the coordinate axes.
pub fn semiconcavity_modulus(field: &ScalarField, step: i64) -> f64 {
    let dim = field.grid().dim();
    (0..dim)
        .map(|axis| {
            let mut steps = vec![0; dim];
            steps[axis] = step;
            second_difference_modulus(field, &steps)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn interp_exact_at_nodes_and_periodic() {
        let g = TorusGrid::new(1, 64).unwrap();
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        assert_eq!(f.interp(&[0.25]), f.values()[16]);
        assert!(f.interp(&[0.25]).abs() < 1e-15);
        for &x in &[0.013, 0.5, 0.77, -0.2] {
            assert!((f.interp(&[x]) - f.interp(&[x + 1.0])).abs() < 1e-12);
        }
    }

    #[test]
    fn interp_midpoint_is_average() {
        let g = TorusGrid::new(1, 64).unwrap();
        let dx = g.spacing();
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let expected = ((2.0 * PI * 0.5).cos() + (2.0 * PI * (0.5 + dx)).cos()) / 2.0;
        assert!((f.interp(&[0.5 + dx / 2.0]) - expected).abs() < 1e-15);
    }

    #[test]
    fn quadrature_examples() {
        let g = TorusGrid::new(1, 64).unwrap();
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        assert!(f.integral().abs() < 1e-15);
        assert!((ScalarField::constant(g, 1.0).integral() - 1.0).abs() < 1e-15);

        let vg = VelocityGrid::new(1, 1.0, 401).unwrap();
        let vals: Vec<f64> = (0..vg.len())
            .map(|j| (-vg.velocity(j)[0].powi(2) / 0.02).exp())
            .collect();
        let q = quadrature(&vals, &[vg.spacing()]);
        assert!((q - (0.02 * PI).sqrt()).abs() < 1e-8, "{q}");
    }

    #[test]
    fn second_difference_examples() {
        let g = TorusGrid::new(1, 64).unwrap();
        let c = ScalarField::constant(g, 3.0);
        assert_eq!(second_difference_modulus(&c, &[1]), 0.0);

        let a = 0.5;
        let alt = ScalarField::new(g, (0..64).map(|i| if i % 2 == 0 { a } else { -a }).collect()).unwrap();
        let dx = g.spacing();
        assert!((second_difference_modulus(&alt, &[1]) - 4.0 * a / (dx * dx)).abs() < 1e-9);

        let big = TorusGrid::new(1, 1024).unwrap();
        let cos = ScalarField::from_fn(big, |x| (2.0 * PI * x[0]).cos());
        let m = second_difference_modulus(&cos, &[1]);
        assert!((m - 4.0 * PI * PI).abs() < 1e-3, "{m}");
    }

    #[test]
    fn velocity_grid_symmetric_and_contains_zero() {
        let vg = VelocityGrid::new(1, 2.5, 11).unwrap();
        assert_eq!(vg.velocity(5)[0], 0.0);
        for j in 0..11 {
            assert_eq!(vg.velocity(j)[0], -vg.velocity(vg.mirror(j))[0]);
        }
        assert!(vg.on_boundary(0) && vg.on_boundary(10) && !vg.on_boundary(5));
        assert!(VelocityGrid::new(1, 1.0, 10).is_err());
    }

    #[test]
    fn node_aligned_velocity_steps_hit_nodes() {
        let g = TorusGrid::new(1, 32).unwrap();
        let vg = VelocityGrid::node_aligned(1, &g, 0.2, 1, 3.0).unwrap();
        for j in 0..vg.len() {
            let shift = 0.2 * vg.velocity(j)[0] * 32.0;
            assert!((shift - shift.round()).abs() < 1e-9);
        }
        assert!(vg.cutoff() >= 3.0);
    }

    #[test]
    fn two_dimensional_interp_bilinear() {
        let g = TorusGrid::new(2, 8).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0] + 10.0 * x[1]);
        // inside the fundamental cell away from the wrap, bilinear is exact for affine data
        let v = f.interp(&[0.3, 0.2]);
        assert!((v - (0.3 + 2.0)).abs() < 1e-12);
    }
}
