//! Builtin periodic Lagrangians, their time reversal, the numerically
//! computed Hamiltonian and finite-difference hypothesis probes.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{TorusGrid, VelocityGrid};

/// Kinetic part `K(v)` of a separable Lagrangian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VelocityProfile {
    /// `|v|^2 / 2`
    Quadratic,
    /// `|v|^2 / 2 + c |v|^4 / 4`, `c >= 0`
    QuadraticQuartic { quartic: f64 },
}

impl VelocityProfile {
    fn eval(&self, v: &[f64]) -> f64 {
        let r2: f64 = v.iter().map(|x| x * x).sum();
        match self {
            Self::Quadratic => 0.5 * r2,
            Self::QuadraticQuartic { quartic } => 0.5 * r2 + 0.25 * quartic * r2 * r2,
        }
    }

    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let r2: f64 = v.iter().map(|x| x * x).sum();
        let scale = match self {
            Self::Quadratic => 1.0,
            Self::QuadraticQuartic { quartic } => 1.0 + quartic * r2,
        };
        v.iter().map(|x| scale * x).collect()
    }
}

/// Periodic potential `U(x)`; the Lagrangian is `K(v) - U(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Potential {
    /// `a Σ_i cos(2π x_i)`
    Cosine { amplitude: f64 },
    /// Samples on `{i/M}^N`, interpolated by a periodic cubic B-spline.
    Tabulated(TabulatedPotential),
}

impl Potential {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Cosine { amplitude } => amplitude * x.iter().map(|xi| (2.0 * PI * xi).cos()).sum::<f64>(),
            Self::Tabulated(t) => t.eval(x),
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Cosine { amplitude } => x
                .iter()
                .map(|xi| -2.0 * PI * amplitude * (2.0 * PI * xi).sin())
                .collect(),
            Self::Tabulated(t) => t.gradient(x),
        }
    }
}

/// Periodic cubic B-spline through uniform samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabulatedSamples", into = "TabulatedSamples")]
pub struct TabulatedPotential {
    grid: TorusGrid,
    samples: Vec<f64>,
    coefficients: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TabulatedSamples {
    dim: usize,
    samples: Vec<f64>,
}

impl TryFrom<TabulatedSamples> for TabulatedPotential {
    type Error = Error;
    fn try_from(t: TabulatedSamples) -> Result<Self> {
        Self::new(t.dim, t.samples)
    }
}

impl From<TabulatedPotential> for TabulatedSamples {
    fn from(t: TabulatedPotential) -> Self {
        Self {
            dim: t.grid.dim(),
            samples: t.samples,
        }
    }
}

impl TabulatedPotential {
    pub fn new(dim: usize, samples: Vec<f64>) -> Result<Self> {
        let m = (samples.len() as f64).powf(1.0 / dim as f64).round() as usize;
        if m.pow(dim as u32) != samples.len() {
            return Err(Error::InvalidInput(format!(
                "{} samples do not form an M^{dim} grid",
                samples.len()
            )));
        }
        let grid = TorusGrid::new(dim, m)?;
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("potential samples must be finite".into()));
        }
        let coefficients = prefilter(&grid, &samples);
        Ok(Self {
            grid,
            samples,
            coefficients,
        })
    }

    /// Reads a single-column CSV of `M^N` samples (row-major for `N = 2`).
    pub fn from_csv(path: &Path, dim: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .from_path(path)?;
        let mut samples = Vec::new();
        for record in reader.records() {
            let record = record?;
            let field = record
                .get(0)
                .ok_or_else(|| Error::InvalidInput("empty CSV row".into()))?;
            let value: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("not a number: {field}")))?;
            samples.push(value);
        }
        Self::new(dim, samples)
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.spline(x, None)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.grid.dim()).map(|axis| self.spline(x, Some(axis))).collect()
    }

    /// Tensor-product evaluation; `derivative` selects one axis to differentiate.
    fn spline(&self, x: &[f64], derivative: Option<usize>) -> f64 {
        let dim = self.grid.dim();
        let m = self.grid.points_per_axis();
        let mf = m as f64;
        let mut base = vec![0i64; dim];
        let mut weights = vec![[0.0; 4]; dim];
        for axis in 0..dim {
            let t = (x[axis] * mf).rem_euclid(mf);
            let i = t.floor();
            let f = t - i;
            base[axis] = i as i64;
            weights[axis] = if derivative == Some(axis) {
                let d = bspline_derivative_weights(f);
                [d[0] * mf, d[1] * mf, d[2] * mf, d[3] * mf]
            } else {
                bspline_weights(f)
            };
        }
        let mut acc = 0.0;
        let mut idx = vec![0i64; dim];
        for corner in 0..4usize.pow(dim as u32) {
            let mut rest = corner;
            let mut w = 1.0;
            for axis in (0..dim).rev() {
                let k = rest % 4;
                rest /= 4;
                idx[axis] = base[axis] + k as i64 - 1;
                w *= weights[axis][k];
            }
            acc += w * self.coefficients[self.grid.flat_index(&idx)];
        }
        acc
    }
}

fn bspline_weights(f: f64) -> [f64; 4] {
    let f2 = f * f;
    let f3 = f2 * f;
    [
        (1.0 - f).powi(3) / 6.0,
        (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0,
        (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0,
        f3 / 6.0,
    ]
}

fn bspline_derivative_weights(f: f64) -> [f64; 4] {
    [
        -0.5 * (1.0 - f).powi(2),
        1.5 * f * f - 2.0 * f,
        -1.5 * f * f + f + 0.5,
        0.5 * f * f,
    ]
}

/// Solves `(c[k-1] + 4 c[k] + c[k+1]) / 6 = s[k]` periodically along each axis.
/// The circulant system is diagonally dominant, so Jacobi sweeps converge
/// with ratio 1/2.
fn prefilter(grid: &TorusGrid, samples: &[f64]) -> Vec<f64> {
    let dim = grid.dim();
    let m = grid.points_per_axis();
    let mut coeffs = samples.to_vec();
    for axis in 0..dim {
        let stride = m.pow((dim - 1 - axis) as u32);
        for start in 0..grid.len() {
            if !(start / stride).is_multiple_of(m) {
                continue;
            }
            let line: Vec<f64> = (0..m).map(|k| coeffs[start + k * stride]).collect();
            let mut c = line.clone();
            for _ in 0..80 {
                let next: Vec<f64> = (0..m)
                    .map(|k| (6.0 * line[k] - c[(k + m - 1) % m] - c[(k + 1) % m]) / 4.0)
                    .collect();
                c = next;
            }
            for (k, value) in c.into_iter().enumerate() {
                coeffs[start + k * stride] = value;
            }
        }
    }
    coeffs
}

/// Builtin Lagrangian families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LagrangianKind {
    /// `|v|^2 / 2`
    Quadratic,
    /// `|v - ω|^2 / 2`
    ShiftedQuadratic { omega: Vec<f64> },
    /// `K(v) - U(x)`
    Separable {
        kinetic: VelocityProfile,
        potential: Potential,
    },
}

/// An evaluatable periodic Lagrangian on `T^N × R^N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangianSpec {
    dimension: usize,
    kind: LagrangianKind,
}

impl LagrangianSpec {
    pub fn new(dimension: usize, kind: LagrangianKind) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        match &kind {
            LagrangianKind::ShiftedQuadratic { omega } if omega.len() != dimension => {
                return Err(Error::InvalidInput(format!(
                    "omega has {} components, dimension is {dimension}",
                    omega.len()
                )))
            }
            LagrangianKind::Separable { kinetic, potential } => {
                if let VelocityProfile::QuadraticQuartic { quartic } = kinetic {
                    if *quartic < 0.0 {
                        return Err(Error::InvalidInput("quartic coefficient must be >= 0".into()));
                    }
                }
                if let Potential::Tabulated(t) = potential {
                    if t.grid.dim() != dimension {
                        return Err(Error::InvalidInput("tabulated potential dimension mismatch".into()));
                    }
                }
            }
            _ => {}
        }
        Ok(Self { dimension, kind })
    }

    pub fn quadratic(dimension: usize) -> Self {
        Self {
            dimension,
            kind: LagrangianKind::Quadratic,
        }
    }

    pub fn shifted_quadratic(omega: Vec<f64>) -> Self {
        Self {
            dimension: omega.len(),
            kind: LagrangianKind::ShiftedQuadratic { omega },
        }
    }

    /// `|v|^2/2 - a Σ cos(2π x_i)`; `a = 1` is the pendulum.
    pub fn cosine(dimension: usize, amplitude: f64) -> Self {
        Self {
            dimension,
            kind: LagrangianKind::Separable {
                kinetic: VelocityProfile::Quadratic,
                potential: Potential::Cosine { amplitude },
            },
        }
    }

    pub fn pendulum() -> Self {
        Self::cosine(1, 1.0)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kind(&self) -> &LagrangianKind {
        &self.kind
    }

    /// Largest `|ω|`, zero for unshifted kinds.
    pub fn drift(&self) -> f64 {
        match &self.kind {
            LagrangianKind::ShiftedQuadratic { omega } => omega.iter().map(|w| w * w).sum::<f64>().sqrt(),
            _ => 0.0,
        }
    }

    /// True when `L` depends on `v` only.
    pub fn is_velocity_only(&self) -> bool {
        !matches!(self.kind, LagrangianKind::Separable { .. })
    }

    pub fn eval(&self, x: &[f64], v: &[f64]) -> f64 {
        match &self.kind {
            LagrangianKind::Quadratic => 0.5 * v.iter().map(|a| a * a).sum::<f64>(),
            LagrangianKind::ShiftedQuadratic { omega } => {
                0.5 * v.iter().zip(omega).map(|(a, w)| (a - w) * (a - w)).sum::<f64>()
            }
            LagrangianKind::Separable { kinetic, potential } => kinetic.eval(v) - potential.eval(x),
        }
    }

    /// Time-reversed Lagrangian `L(x + h v, -v)`.
    pub fn eval_reversed(&self, h: f64, x: &[f64], v: &[f64]) -> f64 {
        let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let w: Vec<f64> = v.iter().map(|a| -a).collect();
        self.eval(&y, &w)
    }

    /// `∂L/∂x` in closed form.
    pub fn grad_x(&self, x: &[f64], _v: &[f64]) -> Vec<f64> {
        match &self.kind {
            LagrangianKind::Separable { potential, .. } => potential.gradient(x).into_iter().map(|g| -g).collect(),
            _ => vec![0.0; self.dimension],
        }
    }

    /// `∂L/∂v` in closed form.
    pub fn grad_v(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        match &self.kind {
            LagrangianKind::Quadratic => v.to_vec(),
            LagrangianKind::ShiftedQuadratic { omega } => v.iter().zip(omega).map(|(a, w)| a - w).collect(),
            LagrangianKind::Separable { kinetic, .. } => kinetic.gradient(v),
        }
    }

    /// `H(p, x) = sup_v (-p·v - L(x, v))` by a grid scan refined with one
    /// parabolic fit per axis around the discrete argmax.
    pub fn hamiltonian(&self, p: &[f64], x: &[f64], vgrid: &VelocityGrid) -> Result<f64> {
        let objective = |v: &[f64]| -> f64 {
            -p.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() - self.eval(x, v)
        };
        let (best, best_value) = (0..vgrid.len())
            .map(|j| (j, objective(vgrid.velocity(j))))
            .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if vgrid.on_boundary(best) {
            return Err(Error::CutoffTooSmall {
                x: x.to_vec(),
                ratio: 1.0,
            });
        }
        let dv = vgrid.spacing();
        let center = vgrid.velocity(best).to_vec();
        let mut gain = 0.0;
        for axis in 0..self.dimension {
            let mut plus = center.clone();
            let mut minus = center.clone();
            plus[axis] += dv;
            minus[axis] -= dv;
            let (fp, fm) = (objective(&plus), objective(&minus));
            let curvature = fp - 2.0 * best_value + fm;
            if curvature < 0.0 {
                gain += -(fp - fm).powi(2) / (8.0 * curvature);
            }
        }
        Ok(best_value + gain)
    }

    /// Samples finite differences to check convexity, superlinearity and to
    /// estimate the second-difference constants and the velocity bound.
    pub fn probe_hypotheses(&self, samples: &ProbeSamples) -> Result<HypothesisReport> {
        let dim = self.dimension;
        let xs = sample_points(dim, samples.x_samples);
        let dirs = unit_directions(dim, samples.directions);
        let radii: Vec<f64> = (0..samples.v_samples)
            .map(|i| samples.v_range * i as f64 / (samples.v_samples - 1).max(1) as f64)
            .collect();
        let dv = 0.25;
        let dy = 1.0 / 64.0;

        let mut convexity_min = f64::INFINITY;
        let mut c_est: f64 = 0.0;
        let mut gamma_est: f64 = 0.0;
        for x in &xs {
            for d in &dirs {
                for &r in &radii {
                    let v: Vec<f64> = d.iter().map(|a| a * r).collect();
                    for e in &dirs {
                        let vp: Vec<f64> = v.iter().zip(e).map(|(a, b)| a + dv * b).collect();
                        let vm: Vec<f64> = v.iter().zip(e).map(|(a, b)| a - dv * b).collect();
                        let second = (self.eval(x, &vp) + self.eval(x, &vm) - 2.0 * self.eval(x, &v)) / (dv * dv);
                        convexity_min = convexity_min.min(second);
                        gamma_est = gamma_est.max(second);

                        let xp: Vec<f64> = x.iter().zip(e).map(|(a, b)| a + dy * b).collect();
                        let xm: Vec<f64> = x.iter().zip(e).map(|(a, b)| a - dy * b).collect();
                        let second_x = (self.eval(&xp, &v) + self.eval(&xm, &v) - 2.0 * self.eval(x, &v)) / (dy * dy);
                        c_est = c_est.max(second_x);
                    }
                }
            }
        }
        if convexity_min < -1e-9 {
            return Err(Error::HypothesisViolated(format!(
                "convexity: second difference {convexity_min} < 0"
            )));
        }

        let superlinearity_ok = (0..40).any(|k| {
            let r = 2f64.powi(k);
            xs.iter().all(|x| {
                dirs.iter().all(|d| {
                    let v: Vec<f64> = d.iter().map(|a| a * r).collect();
                    self.eval(x, &v) / r > samples.superlinearity_threshold
                })
            })
        });
        if !superlinearity_ok {
            return Err(Error::HypothesisViolated("superlinearity".into()));
        }

        let velocity_bound = self.velocity_bound(&xs, &dirs);
        Ok(HypothesisReport {
            superlinearity_ok,
            convexity_min_second_difference: convexity_min,
            estimated_c: c_est.max(0.0),
            estimated_gamma: gamma_est.max(0.0),
            velocity_bound,
        })
    }

    /// Smallest `K` with `L(x, v) > A(R)` for `|v| >= K`, where
    /// `A(R) = max{L(x, v) : |v| <= R}` and `R` is twice the torus diameter.
    fn velocity_bound(&self, xs: &[Vec<f64>], dirs: &[Vec<f64>]) -> f64 {
        let big_r = 2.0 * 0.5 * (self.dimension as f64).sqrt();
        let steps = 400;
        let mut a_r = f64::NEG_INFINITY;
        for x in xs {
            for d in dirs {
                for i in 0..=steps {
                    let r = big_r * i as f64 / steps as f64;
                    let v: Vec<f64> = d.iter().map(|a| a * r).collect();
                    a_r = a_r.max(self.eval(x, &v));
                }
            }
        }
        let dr = 1e-3;
        let mut last_bad = 0.0;
        let mut r = 0.0;
        // past 1e4 every builtin is far above A(R)
        while r < 1e4 {
            let bad = xs.iter().any(|x| {
                dirs.iter().any(|d| {
                    let v: Vec<f64> = d.iter().map(|a| a * r).collect();
                    self.eval(x, &v) <= a_r
                })
            });
            if bad {
                last_bad = r;
            } else if r > 2.0 * last_bad + 10.0 {
                break;
            }
            r += dr * (1.0 + r);
        }
        last_bad + dr * (1.0 + last_bad)
    }
}

/// Sample counts for [`LagrangianSpec::probe_hypotheses`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeSamples {
    pub x_samples: usize,
    pub v_samples: usize,
    pub v_range: f64,
    pub directions: usize,
    pub superlinearity_threshold: f64,
}

impl Default for ProbeSamples {
    fn default() -> Self {
        Self {
            x_samples: 32,
            v_samples: 17,
            v_range: 4.0,
            directions: 8,
            superlinearity_threshold: 100.0,
        }
    }
}

fn sample_points(dim: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let per_axis = if dim == 1 { per_axis } else { (per_axis as f64).sqrt().ceil() as usize };
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|flat| {
            let mut rest = flat;
            let mut x = vec![0.0; dim];
            for axis in (0..dim).rev() {
                x[axis] = (rest % per_axis) as f64 / per_axis as f64;
                rest /= per_axis;
            }
            x
        })
        .collect()
}

fn unit_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count.max(4))
            .map(|k| {
                let a = 2.0 * PI * k as f64 / count.max(4) as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => (0..dim)
            .flat_map(|axis| {
                [1.0, -1.0].into_iter().map(move |s| {
                    let mut e = vec![0.0; dim];
                    e[axis] = s;
                    e
                })
            })
            .collect(),
    }
}

/// Output of [`LagrangianSpec::probe_hypotheses`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub superlinearity_ok: bool,
    pub convexity_min_second_difference: f64,
    /// Largest sampled second difference of `L` in `x` (per unit `|y|^2`).
    pub estimated_c: f64,
    /// Largest sampled second difference of `L` in `v` (per unit `|z|^2`).
    pub estimated_gamma: f64,
    /// Velocity bound for minimizing paths.
    pub velocity_bound: f64,
}

impl HypothesisReport {
    /// `C̄ = C + Γ`, the uniform semiconcavity bound of the fixed points.
    pub fn semiconcavity_bound(&self) -> f64 {
        self.estimated_c + self.estimated_gamma
    }
}
