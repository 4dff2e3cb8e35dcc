//! Exact discrete Aubry–Mather layer on the grid graph.
//!
//! Velocities are node-aligned, `v = j Δx / h` with integer steps `|j_i| ≤ J`,
//! so every edge `x → x + hv` lands exactly on a node and records the integer
//! torus shift it crossed. Weights are stored as `hL` and re-derived for any
//! critical value as `hL - h H̄`.
//!
//! Two subaction orientations appear here. A *calibrated* field satisfies
//! `u(x) ≤ u(y) + w(x→y)` with equality on some edge out of every node
//! (Mañé columns `S(·, z)`, Peierls columns, the hard Bellman `φ_h`).
//! A *separating* field satisfies `u(y) - u(x) ≤ w(x→y)` (rows `S(z, ·)`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid};
use crate::limits::grad_phi0;
use crate::problem::LagrangianSpec;

/// Relative decrease of a running minimum that still counts as "moving".
const STALL_TOLERANCE: f64 = 1e-10;

/// Directed grid graph of one time step `h`.
#[derive(Clone, Debug)]
pub struct PathGraph {
    torus: TorusGrid,
    h: f64,
    max_step: usize,
    /// Integer step vector of every edge slot.
    steps: Vec<Vec<i64>>,
    /// `hL(x, v)` per node and slot.
    hl: Vec<f64>,
    targets: Vec<u32>,
    /// `sources[y * deg + s]` is the node whose slot `s` edge lands on `y`.
    sources: Vec<u32>,
}

impl PathGraph {
    /// Graph with every node-aligned velocity of sup-norm at most `cutoff`.
    pub fn new(spec: &LagrangianSpec, torus: TorusGrid, h: f64, cutoff: f64) -> Result<Self> {
        if spec.dimension() != torus.dim() {
            return Err(Error::InvalidInput("graph and Lagrangian dimensions differ".into()));
        }
        if !(h > 0.0 && h.is_finite()) || !(cutoff >= 0.0) {
            return Err(Error::InvalidInput(format!("bad step h = {h} or cutoff {cutoff}")));
        }
        let m = torus.points_per_axis();
        let max_step = (cutoff * h * m as f64 + 1e-9).floor() as usize;
        let graph = Self::with_max_step(spec, torus, h, max_step);
        graph.check_connected()?;
        Ok(graph)
    }

    fn with_max_step(spec: &LagrangianSpec, torus: TorusGrid, h: f64, max_step: usize) -> Self {
        let dim = torus.dim();
        let side = 2 * max_step + 1;
        let slots = side.pow(dim as u32);
        let steps: Vec<Vec<i64>> = (0..slots)
            .map(|s| {
                let mut rest = s;
                let mut j = vec![0i64; dim];
                for axis in (0..dim).rev() {
                    j[axis] = (rest % side) as i64 - max_step as i64;
                    rest /= side;
                }
                j
            })
            .collect();
        let dx = torus.spacing();
        let rows: Vec<(Vec<f64>, Vec<u32>)> = (0..torus.len())
            .into_par_iter()
            .map(|xi| {
                let x = torus.point(xi);
                let idx: Vec<i64> = torus.multi_index(xi).iter().map(|&i| i as i64).collect();
                let mut hl = Vec::with_capacity(slots);
                let mut tg = Vec::with_capacity(slots);
                let mut moved = vec![0i64; dim];
                for j in &steps {
                    let v: Vec<f64> = j.iter().map(|&k| k as f64 * dx / h).collect();
                    hl.push(h * spec.eval(&x, &v));
                    for a in 0..dim {
                        moved[a] = idx[a] + j[a];
                    }
                    tg.push(torus.flat_index(&moved) as u32);
                }
                (hl, tg)
            })
            .collect();
        let mut hl = Vec::with_capacity(torus.len() * slots);
        let mut targets = Vec::with_capacity(torus.len() * slots);
        for (a, b) in rows {
            hl.extend(a);
            targets.extend(b);
        }
        let mut sources = vec![0u32; targets.len()];
        for (e, &y) in targets.iter().enumerate() {
            let s = e % slots;
            sources[y as usize * slots + s] = (e / slots) as u32;
        }
        Self {
            torus,
            h,
            max_step,
            steps,
            hl,
            targets,
            sources,
        }
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.len();
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
        for x in 0..n {
            for s in 0..self.out_degree() {
                incoming[self.target(x, s)].push(x);
            }
        }
        let reach = |adj: &dyn Fn(usize) -> Vec<usize>| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(x) = stack.pop() {
                for y in adj(x) {
                    if !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
            seen.into_iter().all(|b| b)
        };
        let forward = reach(&|x| (0..self.out_degree()).map(|s| self.target(x, s)).collect());
        let backward = reach(&|x| incoming[x].clone());
        if forward && backward {
            Ok(())
        } else {
            Err(Error::NotStronglyConnected)
        }
    }

    pub fn torus(&self) -> &TorusGrid {
        &self.torus
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Largest integer step `J` per axis.
    pub fn max_step(&self) -> usize {
        self.max_step
    }

    pub fn len(&self) -> usize {
        self.torus.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Edges per node, `(2J + 1)^N`.
    pub fn out_degree(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, slot: usize) -> &[i64] {
        &self.steps[slot]
    }

    /// Slot index of an integer step, if it is an edge.
    pub fn slot_of(&self, step: &[i64]) -> Option<usize> {
        let j = self.max_step as i64;
        if step.len() != self.torus.dim() || step.iter().any(|&s| s.abs() > j) {
            return None;
        }
        let side = 2 * j + 1;
        Some(step.iter().fold(0i64, |acc, &s| acc * side + s + j) as usize)
    }

    pub fn velocity(&self, slot: usize) -> Vec<f64> {
        let scale = self.torus.spacing() / self.h;
        self.steps[slot].iter().map(|&k| k as f64 * scale).collect()
    }

    pub fn target(&self, x: usize, slot: usize) -> usize {
        self.targets[x * self.out_degree() + slot] as usize
    }

    /// Integer shift `s` with `idx(x) + j = idx(target) + M s`.
    pub fn shift(&self, x: usize, slot: usize) -> Vec<i64> {
        let m = self.torus.points_per_axis() as i64;
        self.torus
            .multi_index(x)
            .iter()
            .zip(&self.steps[slot])
            .map(|(&i, &j)| (i as i64 + j).div_euclid(m))
            .collect()
    }

    /// Stored `hL(x, v)`.
    pub fn hl(&self, x: usize, slot: usize) -> f64 {
        self.hl[x * self.out_degree() + slot]
    }

    /// Edge weight `h (L - H̄)`.
    pub fn weight(&self, x: usize, slot: usize, hbar: f64) -> f64 {
        self.hl(x, slot) - self.h * hbar
    }

    fn row(&self, x: usize) -> (&[f64], &[u32]) {
        let d = self.out_degree();
        (&self.hl[x * d..(x + 1) * d], &self.targets[x * d..(x + 1) * d])
    }

    /// Node `x - j` and slot `j`, i.e. the sources of edges into `y`.
    fn source(&self, y: usize, slot: usize) -> usize {
        self.sources[y * self.out_degree() + slot] as usize
    }
}

/// Ordered node list with the integer step taken at each edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KPath {
    pub nodes: Vec<usize>,
    pub steps: Vec<Vec<i64>>,
}

impl KPath {
    pub fn new(nodes: Vec<usize>, steps: Vec<Vec<i64>>) -> Result<Self> {
        if nodes.is_empty() || steps.len() + 1 != nodes.len() {
            return Err(Error::InvalidInput("a k-path needs k steps and k + 1 nodes".into()));
        }
        Ok(Self { nodes, steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Same path translated by `offset` grid nodes per axis.
    pub fn translated(&self, torus: &TorusGrid, offset: &[i64]) -> Self {
        let nodes = self
            .nodes
            .iter()
            .map(|&x| {
                let idx: Vec<i64> = torus
                    .multi_index(x)
                    .iter()
                    .zip(offset)
                    .map(|(&i, &o)| i as i64 + o)
                    .collect();
                torus.flat_index(&idx)
            })
            .collect();
        Self {
            nodes,
            steps: self.steps.clone(),
        }
    }

    /// Cumulative torus shifts crossed by each step.
    pub fn shifts(&self, graph: &PathGraph) -> Result<Vec<Vec<i64>>> {
        self.steps
            .iter()
            .enumerate()
            .map(|(k, j)| {
                let slot = graph.slot_of(j).ok_or(Error::InvalidEdge { step: k })?;
                Ok(graph.shift(self.nodes[k], slot))
            })
            .collect()
    }
}

/// `Σ h(L - H̄)` along the path.
pub fn path_action(graph: &PathGraph, path: &KPath, hbar: f64) -> Result<f64> {
    let mut total = 0.0;
    for (k, j) in path.steps.iter().enumerate() {
        let x = path.nodes[k];
        let slot = graph.slot_of(j).ok_or(Error::InvalidEdge { step: k })?;
        if x >= graph.len() || graph.target(x, slot) != path.nodes[k + 1] {
            return Err(Error::InvalidEdge { step: k });
        }
        total += graph.weight(x, slot, hbar);
    }
    Ok(total)
}

/// Minimum mean cycle of the `hL` weights, reported per unit time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalValue {
    /// `H̄_h` = mean cycle weight / h.
    pub hbar: f64,
    /// One cycle attaining the minimum mean.
    pub cycle: KPath,
}

/// Karp's k-level characterization of the minimum cycle mean, followed by
/// recovery of an optimal cycle whose mean is recomputed from its edges.
pub fn min_mean_cycle(graph: &PathGraph) -> Result<CriticalValue> {
    graph.check_connected()?;
    let n = graph.len();
    let deg = graph.out_degree();
    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut parents: Vec<Vec<u32>> = Vec::with_capacity(n + 1);
    levels.push(vec![0.0; n]);
    parents.push(vec![u32::MAX; n]);
    for k in 1..=n {
        let prev = &levels[k - 1];
        let (next, par): (Vec<f64>, Vec<u32>) = (0..n)
            .into_par_iter()
            .map(|y| {
                let mut best = f64::INFINITY;
                let mut arg = u32::MAX;
                for s in 0..deg {
                    let x = graph.source(y, s);
                    let c = prev[x] + graph.hl(x, s);
                    if c < best {
                        best = c;
                        arg = s as u32;
                    }
                }
                (best, arg)
            })
            .unzip();
        levels.push(next);
        parents.push(par);
    }
    let mut mu = f64::INFINITY;
    let mut end = 0;
    for v in 0..n {
        let dn = levels[n][v];
        let worst = (0..n)
            .filter(|&k| levels[k][v].is_finite())
            .map(|k| (dn - levels[k][v]) / (n - k) as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        if worst < mu {
            mu = worst;
            end = v;
        }
    }
    // Walk the length-n optimal path back from `end`; it contains a
    // minimum-mean cycle.
    let mut walk = vec![end];
    let mut slots = Vec::with_capacity(n);
    let mut y = end;
    for k in (1..=n).rev() {
        let s = parents[k][y] as usize;
        let x = graph.source(y, s);
        slots.push(s);
        walk.push(x);
        y = x;
    }
    walk.reverse();
    slots.reverse();
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..walk.len() {
        if let Some(off) = walk[i + 1..].iter().position(|&z| z == walk[i]) {
            let j = i + 1 + off;
            let sum: f64 = (i..j).map(|k| graph.hl(walk[k], slots[k])).sum();
            let mean = sum / (j - i) as f64;
            if best.is_none_or(|b| mean < b.0) {
                best = Some((mean, i, j));
            }
        }
    }
    let (mean, i, j) = best.ok_or_else(|| Error::InvalidInput("no cycle on the optimal walk".into()))?;
    let cycle = KPath {
        nodes: walk[i..=j].to_vec(),
        steps: slots[i..j].iter().map(|&s| graph.step(s).to_vec()).collect(),
    };
    Ok(CriticalValue {
        hbar: mean / graph.h,
        cycle,
    })
}

/// Single-source Mañé and Peierls values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManeTable {
    pub source: usize,
    /// `S_h(x, z)` per node `x`.
    pub to_source: Vec<f64>,
    /// `S_h(z, y)` per node `y`.
    pub from_source: Vec<f64>,
    /// `h_h(x, z)` per node `x`.
    pub peierls: Vec<f64>,
    pub k_max: usize,
    pub window: usize,
}

/// Default DP depth, `8 M`.
pub fn default_k_max(torus: &TorusGrid) -> usize {
    8 * torus.points_per_axis()
}

/// k-level value iteration towards and away from `z`, tracking the running
/// minimum (Mañé) and the trailing-window minimum (Peierls).
pub fn mane_table(graph: &PathGraph, z: usize, hbar: f64, k_max: usize, window: usize) -> Result<ManeTable> {
    let n = graph.len();
    if z >= n || k_max == 0 || window > k_max {
        return Err(Error::InvalidInput(format!("bad source {z}, k_max {k_max} or window {window}")));
    }
    let deg = graph.out_degree();
    let shift = graph.h * hbar;
    let mut start = vec![f64::INFINITY; n];
    start[z] = 0.0;

    let towards = |prev: &[f64]| -> Vec<f64> {
        (0..n)
            .into_par_iter()
            .map(|x| {
                let (hl, tg) = graph.row(x);
                (0..deg)
                    .map(|s| hl[s] - shift + prev[tg[s] as usize])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let away = |prev: &[f64]| -> Vec<f64> {
        (0..n)
            .into_par_iter()
            .map(|y| {
                (0..deg)
                    .map(|s| {
                        let x = graph.source(y, s);
                        prev[x] + graph.hl(x, s) - shift
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };

    let (to_source, peierls) = run_levels(&start, k_max, window, towards)?;
    let (from_source, _) = run_levels(&start, k_max, window, away)?;
    Ok(ManeTable {
        source: z,
        to_source,
        from_source,
        peierls,
        k_max,
        window,
    })
}

fn run_levels(
    start: &[f64],
    k_max: usize,
    window: usize,
    step: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = start.len();
    let mut level = start.to_vec();
    let mut running = vec![f64::INFINITY; n];
    let mut tail = vec![f64::INFINITY; n];
    for k in 1..=k_max {
        level = step(&level);
        for x in 0..n {
            let v = level[x];
            if v < running[x] {
                let moved = running[x].is_finite()
                    && running[x] - v > STALL_TOLERANCE * (1.0 + v.abs());
                if moved && 2 * k > k_max {
                    return Err(Error::NegativeCycle { k });
                }
                running[x] = v;
            }
            if k + window >= k_max {
                tail[x] = tail[x].min(v);
            }
        }
    }
    if running.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotStronglyConnected);
    }
    Ok((running, tail))
}

/// All-pairs Mañé potential `S(x, y)` (infimum over every path length),
/// by Floyd–Warshall on the one-step weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManeMatrix {
    n: usize,
    hbar: f64,
    values: Vec<f64>,
}

impl ManeMatrix {
    pub fn build(graph: &PathGraph, hbar: f64) -> Result<Self> {
        let n = graph.len();
        let mut values = vec![f64::INFINITY; n * n];
        for x in 0..n {
            for s in 0..graph.out_degree() {
                let y = graph.target(x, s);
                let w = graph.weight(x, s, hbar);
                if w < values[x * n + y] {
                    values[x * n + y] = w;
                }
            }
        }
        for k in 0..n {
            let pivot: Vec<f64> = values[k * n..(k + 1) * n].to_vec();
            values.par_chunks_mut(n).for_each(|row| {
                let dik = row[k];
                if dik.is_finite() {
                    for (r, p) in row.iter_mut().zip(&pivot) {
                        let c = dik + p;
                        if c < *r {
                            *r = c;
                        }
                    }
                }
            });
            let dkk = values[k * n + k];
            if dkk < -STALL_TOLERANCE * (1.0 + dkk.abs()) {
                return Err(Error::NegativeCycle { k });
            }
        }
        Ok(Self { n, hbar, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.n + y]
    }

    /// `S(x, x)` for every node.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|x| self.get(x, x)).collect()
    }

    /// `S(·, z)`.
    pub fn column(&self, z: usize) -> Vec<f64> {
        (0..self.n).map(|x| self.get(x, z)).collect()
    }

    /// `S(z, ·)`.
    pub fn row(&self, z: usize) -> &[f64] {
        &self.values[z * self.n..(z + 1) * self.n]
    }
}

/// Nodes whose return cost `S(x, x)` is at most `tol`.
pub fn nonwandering_set(matrix: &ManeMatrix, tol: f64) -> Vec<usize> {
    (0..matrix.len()).filter(|&x| matrix.get(x, x) <= tol).collect()
}

/// `min_e [u(target) + w] - u(x)` per node: zero everywhere for a calibrated
/// field, nonnegative for a subaction.
pub fn calibration_residuals(graph: &PathGraph, u: &[f64], hbar: f64) -> Vec<f64> {
    let shift = graph.h * hbar;
    (0..graph.len())
        .into_par_iter()
        .map(|x| {
            let (hl, tg) = graph.row(x);
            hl.iter()
                .zip(tg)
                .map(|(w, &y)| w - shift + u[y as usize])
                .fold(f64::INFINITY, f64::min)
                - u[x]
        })
        .collect()
}

/// Slot of the best edge out of each node for a calibrated field.
pub fn optimal_slots(graph: &PathGraph, u: &[f64], hbar: f64) -> Vec<usize> {
    let shift = graph.h * hbar;
    (0..graph.len())
        .map(|x| {
            let (hl, tg) = graph.row(x);
            let mut best = (f64::INFINITY, 0);
            for s in 0..hl.len() {
                let c = hl[s] - shift + u[tg[s] as usize];
                // Ties go to the smallest step so the choice is deterministic.
                let better = c < best.0 - 1e-14 * (1.0 + c.abs())
                    || (c <= best.0 + 1e-14 * (1.0 + c.abs()) && step_norm(graph.step(s)) < step_norm(graph.step(best.1)));
                if better {
                    best = (c, s);
                }
            }
            best.1
        })
        .collect()
}

fn step_norm(j: &[i64]) -> i64 {
    j.iter().map(|a| a * a).sum()
}

/// `h_h(·, z)` checked for calibration within `tol`.
pub fn calibrated_from_barrier(
    graph: &PathGraph,
    z: usize,
    hbar: f64,
    k_max: usize,
    window: usize,
    tol: f64,
) -> Result<ScalarField> {
    let table = mane_table(graph, z, hbar, k_max, window)?;
    let u = table.peierls;
    let residuals = calibration_residuals(graph, &u, hbar);
    let (node, worst) = residuals
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.abs()))
        .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    if worst > tol {
        return Err(Error::NotCalibrated {
            node,
            residual: residuals[node],
        });
    }
    ScalarField::new(graph.torus, u)
}

/// `max_x |u(x) - min_{p ∈ Ω} (u(p) + S(x, p))|`.
pub fn representation_check(u: &ScalarField, matrix: &ManeMatrix, omega: &[usize]) -> f64 {
    let values = u.values();
    (0..values.len())
        .map(|x| {
            let rep = omega
                .iter()
                .map(|&p| values[p] + matrix.get(x, p))
                .fold(f64::INFINITY, f64::min);
            (values[x] - rep).abs()
        })
        .fold(0.0, f64::max)
}

/// Weights of the series defining the separating subaction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeparatingWeights {
    /// `1/n` for each of the `n` nodes off Ω.
    #[default]
    Uniform,
    /// `2^{-j}` in row-major order, renormalized to sum to one.
    Geometric,
}

/// Separating subaction and its post-check diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeparatingSubaction {
    pub field: ScalarField,
    /// Ω covers the whole grid; `field` is then the calibrated zero field.
    pub omega_is_everything: bool,
    /// `min_e [w + u(x) - u(y)]` per node.
    pub residuals: Vec<f64>,
    pub max_residual_on_omega: f64,
    pub min_gap_off_omega: f64,
    /// Largest discrete slope among the summed rows `S(x_j, ·)`.
    pub lipschitz: f64,
}

/// `u(y) = Σ_j w_j (S(x_j, y) - S(x_j, 0))` over nodes `x_j` off Ω.
///
/// Each row `S(x_j, ·)` satisfies `u(y) - u(x) ≤ w(x→y)` and is strict at
/// `x_j` by `S(x_j, x_j) > 0`, so the convex combination is strict exactly
/// off Ω. Off-Ω strictness is checked against `tol · min_j w_j`.
pub fn separating_subaction(
    graph: &PathGraph,
    matrix: &ManeMatrix,
    omega: &[usize],
    tol: f64,
    weights: SeparatingWeights,
) -> Result<SeparatingSubaction> {
    let n = graph.len();
    let hbar = matrix.hbar();
    let mut in_omega = vec![false; n];
    for &p in omega {
        in_omega[p] = true;
    }
    let cover: Vec<usize> = (0..n).filter(|&x| !in_omega[x]).collect();
    let coeffs: Vec<f64> = match weights {
        SeparatingWeights::Uniform => vec![1.0 / cover.len().max(1) as f64; cover.len()],
        SeparatingWeights::Geometric => {
            let raw: Vec<f64> = (1..=cover.len()).map(|j| 0.5f64.powi(j as i32)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect()
        }
    };
    let mut u = vec![0.0; n];
    let mut lipschitz: f64 = 0.0;
    for (&xj, &c) in cover.iter().zip(&coeffs) {
        let row = matrix.row(xj);
        let base = row[0];
        for y in 0..n {
            u[y] += c * (row[y] - base);
        }
        lipschitz = lipschitz.max(max_slope(&graph.torus, row));
    }
    let shift = graph.h * hbar;
    let residuals: Vec<f64> = (0..n)
        .map(|x| {
            let (hl, tg) = graph.row(x);
            hl.iter()
                .zip(tg)
                .map(|(w, &y)| w - shift + u[x] - u[y as usize])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let max_on = omega.iter().map(|&p| residuals[p].abs()).fold(0.0, f64::max);
    let min_off = cover.iter().map(|&x| residuals[x]).fold(f64::INFINITY, f64::min);
    let floor = tol * coeffs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut bad: Vec<usize> = cover.iter().copied().filter(|&x| residuals[x] <= floor).collect();
    bad.extend(omega.iter().copied().filter(|&p| residuals[p].abs() > tol));
    bad.extend((0..n).filter(|&x| residuals[x] < -tol));
    if !bad.is_empty() {
        bad.sort_unstable();
        bad.dedup();
        return Err(Error::SeparationFailed { nodes: bad });
    }
    Ok(SeparatingSubaction {
        field: ScalarField::new(graph.torus, u)?,
        omega_is_everything: cover.is_empty(),
        residuals,
        max_residual_on_omega: max_on,
        min_gap_off_omega: min_off,
        lipschitz,
    })
}

/// Largest `|f(x + e_a Δx) - f(x)| / Δx` over nodes and axes.
pub fn max_slope(torus: &TorusGrid, values: &[f64]) -> f64 {
    let dx = torus.spacing();
    let mut worst: f64 = 0.0;
    for x in 0..torus.len() {
        let idx: Vec<i64> = torus.multi_index(x).iter().map(|&i| i as i64).collect();
        for a in 0..torus.dim() {
            let mut next = idx.clone();
            next[a] += 1;
            let y = torus.flat_index(&next);
            worst = worst.max((values[y] - values[x]).abs() / dx);
        }
    }
    worst
}

/// Result of comparing a calibrated field's gradient with `h L_x - L_v`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_error: f64,
    pub checked: usize,
    pub excluded: usize,
    /// Node of the largest error.
    pub worst_node: usize,
}

/// Finite-difference gradient of `u` against `h L_x(x, v(x)) - L_v(x, v(x))`
/// at nodes where the one-sided differences agree to within `kink_threshold`.
pub fn graph_gradient_check(
    graph: &PathGraph,
    spec: &LagrangianSpec,
    u: &ScalarField,
    hbar: f64,
    kink_threshold: f64,
) -> GradientCheck {
    let torus = graph.torus;
    let values = u.values();
    let slots = optimal_slots(graph, values, hbar);
    let grad = grad_phi0(u, kink_threshold);
    let mut report = GradientCheck {
        max_error: 0.0,
        checked: 0,
        excluded: 0,
        worst_node: 0,
    };
    for x in 0..torus.len() {
        if grad.is_kink(x) {
            report.excluded += 1;
            continue;
        }
        let point = torus.point(x);
        let v = graph.velocity(slots[x]);
        let lx = spec.grad_x(&point, &v);
        let lv = spec.grad_v(&point, &v);
        let err = (0..torus.dim())
            .map(|a| (grad.at(x)[a] - (graph.h * lx[a] - lv[a])).abs())
            .fold(0.0, f64::max);
        report.checked += 1;
        if err > report.max_error {
            report.max_error = err;
            report.worst_node = x;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pendulum(m: usize, h: f64) -> PathGraph {
        PathGraph::new(&LagrangianSpec::pendulum(), TorusGrid::new(1, m).unwrap(), h, 3.0).unwrap()
    }

    #[test]
    fn shifts_reassemble_steps() {
        let g = pendulum(16, 0.25);
        let m = 16i64;
        for x in 0..g.len() {
            for s in 0..g.out_degree() {
                let lhs = x as i64 + g.step(s)[0];
                let rhs = g.target(x, s) as i64 + m * g.shift(x, s)[0];
                assert_eq!(lhs, rhs);
            }
        }
        assert_eq!(g.out_degree(), 2 * g.max_step() + 1);
    }

    #[test]
    fn zero_cutoff_is_disconnected() {
        let spec = LagrangianSpec::quadratic(1);
        let torus = TorusGrid::new(1, 16).unwrap();
        assert!(matches!(
            PathGraph::new(&spec, torus, 0.1, 0.1),
            Err(Error::NotStronglyConnected)
        ));
    }

    #[test]
    fn pendulum_critical_value_is_exact() {
        let g = pendulum(32, 0.2);
        let c = min_mean_cycle(&g).unwrap();
        assert_eq!(c.hbar, -1.0);
        assert_eq!(path_action(&g, &c.cycle, c.hbar).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_two_step_action() {
        let spec = LagrangianSpec::quadratic(1);
        let g = PathGraph::new(&spec, TorusGrid::new(1, 8).unwrap(), 0.5, 1.0).unwrap();
        let path = KPath::new(vec![0, 4, 0], vec![vec![4], vec![4]]).unwrap();
        assert!((path_action(&g, &path, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(path.shifts(&g).unwrap(), vec![vec![0], vec![1]]);
        let bad = KPath::new(vec![0, 3], vec![vec![4]]).unwrap();
        assert!(matches!(path_action(&g, &bad, 0.0), Err(Error::InvalidEdge { step: 0 })));
    }

    #[test]
    fn dp_and_floyd_warshall_agree() {
        let g = pendulum(16, 0.25);
        let c = min_mean_cycle(&g).unwrap();
        let mat = ManeMatrix::build(&g, c.hbar).unwrap();
        let table = mane_table(&g, 3, c.hbar, default_k_max(g.torus()), 32).unwrap();
        for x in 0..g.len() {
            assert!((table.to_source[x] - mat.get(x, 3)).abs() < 1e-12);
            assert!((table.from_source[x] - mat.get(3, x)).abs() < 1e-12);
        }
    }

    #[test]
    fn too_large_critical_value_is_a_negative_cycle() {
        let g = pendulum(16, 0.25);
        assert!(matches!(
            mane_table(&g, 0, -0.9, 128, 32),
            Err(Error::NegativeCycle { .. })
        ));
        assert!(matches!(ManeMatrix::build(&g, -0.9), Err(Error::NegativeCycle { .. })));
    }

    #[test]
    fn quadratic_has_no_separation() {
        let spec = LagrangianSpec::quadratic(1);
        let g = PathGraph::new(&spec, TorusGrid::new(1, 16).unwrap(), 0.2, 2.0).unwrap();
        let mat = ManeMatrix::build(&g, 0.0).unwrap();
        let omega = nonwandering_set(&mat, 1e-9);
        assert_eq!(omega.len(), 16);
        let sep = separating_subaction(&g, &mat, &omega, 1e-9, SeparatingWeights::Uniform).unwrap();
        assert!(sep.omega_is_everything);
        assert_eq!(sep.field.max(), 0.0);
    }
}
