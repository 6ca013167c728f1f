//! Time-varying communication graphs and dynamic average tracking.
//!
//! Graphs are proximity graphs weighted by the Metropolis rule, which makes
//! every tick's matrix symmetric and doubly stochastic: consensus iterations
//! preserve the agent average, and the tracking error of the protocol is
//! governed by the second-largest singular value across ticks.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::Point2;
use crate::matrix::Mat;

/// One tick's communication topology with consensus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n_agents: usize,
    weights: Mat,
}

/// Sparse per-agent input signal for a tracking step.
pub type SparseVec = Vec<(usize, f64)>;

impl CommGraph {
    /// Wrap an explicit weight matrix; must be doubly stochastic.
    pub fn from_weights(weights: Mat) -> Result<Self> {
        let n = weights.n_rows();
        if weights.n_cols() != n || n == 0 {
            return Err(Error::Shape(
                "weight matrix must be square and nonempty".into(),
            ));
        }
        let g = CommGraph {
            n_agents: n,
            weights,
        };
        g.check_doubly_stochastic(1e-10)?;
        Ok(g)
    }

    /// Proximity graph over agent positions with Metropolis weights:
    /// agents within `r_comm` of each other exchange weight
    /// `1 / (1 + max(deg_i, deg_j))`; the remainder stays on the diagonal.
    /// Isolated agents get a self-weight of 1.
    pub fn metropolis(positions: &[Point2], r_comm: f64) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::Config("graph needs at least one agent".into()));
        }
        if !(r_comm > 0.0) {
            return Err(Error::Config(format!(
                "r_comm must be positive, got {r_comm}"
            )));
        }
        let mut adjacent = vec![false; n * n];
        let mut degree = vec![0usize; n];
        for i in 0..n {
            for j in (i + 1)..n {
                if positions[i].dist(positions[j]) <= r_comm {
                    adjacent[i * n + j] = true;
                    adjacent[j * n + i] = true;
                    degree[i] += 1;
                    degree[j] += 1;
                }
            }
        }
        let mut weights = Mat::zeros(n, n);
        for i in 0..n {
            let mut off_sum = 0.0;
            for j in 0..n {
                if i != j && adjacent[i * n + j] {
                    let w = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
                    weights.set(i, j, w);
                    off_sum += w;
                }
            }
            weights.set(i, i, 1.0 - off_sum);
        }
        Ok(CommGraph {
            n_agents: n,
            weights,
        })
    }

    /// Complete graph with uniform weights `1/n`.
    pub fn complete(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("graph needs at least one agent".into()));
        }
        Ok(CommGraph {
            n_agents: n,
            weights: Mat::filled(n, n, 1.0 / n as f64),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn weight(&self, i: usize, k: usize) -> f64 {
        self.weights.get(i, k)
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    /// Directed edge set (off-diagonal nonzero weights).
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n_agents;
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.weights.get(i, j) != 0.0 {
                    out.push((i, j, self.weights.get(i, j)));
                }
            }
        }
        out
    }

    pub fn check_doubly_stochastic(&self, tol: f64) -> Result<()> {
        let n = self.n_agents;
        for i in 0..n {
            let mut row = 0.0;
            let mut col = 0.0;
            for j in 0..n {
                let w = self.weights.get(i, j);
                if w < -tol {
                    return Err(Error::Model(format!("negative weight at ({i}, {j})")));
                }
                row += w;
                col += self.weights.get(j, i);
            }
            if (row - 1.0).abs() > tol || (col - 1.0).abs() > tol {
                return Err(Error::Model(format!(
                    "row/col {i} sums ({row}, {col}) are not 1"
                )));
            }
        }
        Ok(())
    }

    /// Second-largest singular value of the weight matrix.
    pub fn sigma2(&self) -> f64 {
        let mut svs = singular_values(&self.weights);
        svs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if svs.len() > 1 {
            svs[1]
        } else {
            0.0
        }
    }
}

/// Per-agent estimate vectors driven by consensus plus local inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    n_agents: usize,
    dim: usize,
    x: Vec<Vec<f64>>,
}

impl TrackerState {
    pub fn new(n_agents: usize, dim: usize) -> Self {
        TrackerState {
            n_agents,
            dim,
            x: vec![vec![0.0; dim]; n_agents],
        }
    }

    pub fn from_vectors(x: Vec<Vec<f64>>) -> Result<Self> {
        let n_agents = x.len();
        let dim = x.first().map_or(0, Vec::len);
        if x.iter().any(|v| v.len() != dim) {
            return Err(Error::Shape(
                "agent vectors must share one dimension".into(),
            ));
        }
        Ok(TrackerState { n_agents, dim, x })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        &self.x[i]
    }

    pub fn agent_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.x[i]
    }

    /// Entrywise mean across agents.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for v in &self.x {
            for (o, val) in out.iter_mut().zip(v) {
                *o += val;
            }
        }
        for o in &mut out {
            *o /= self.n_agents as f64;
        }
        out
    }

    /// Largest entrywise spread across agents (max over entries of
    /// max_i x - min_i x), which equals the max pairwise infinity-norm gap.
    pub fn spread(&self) -> f64 {
        let mut worst = 0.0f64;
        for d in 0..self.dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for v in &self.x {
                lo = lo.min(v[d]);
                hi = hi.max(v[d]);
            }
            worst = worst.max(hi - lo);
        }
        worst
    }
}

/// One synchronous tracking round:
/// `x_i <- x_i + sum_k A_ik (x_k - x_i) + input_i`.
/// All agents read the previous state before anyone writes.
pub fn track_step(ts: &mut TrackerState, graph: &CommGraph, inputs: &[SparseVec]) -> Result<()> {
    track_step_vectors(&mut ts.x, graph, inputs)
}

/// `track_step` over bare per-agent vectors.
pub fn track_step_vectors(
    x: &mut Vec<Vec<f64>>,
    graph: &CommGraph,
    inputs: &[SparseVec],
) -> Result<()> {
    let n = x.len();
    if graph.n_agents() != n {
        return Err(Error::Shape(format!(
            "graph has {} agents, state has {}",
            graph.n_agents(),
            n
        )));
    }
    if inputs.len() != n {
        return Err(Error::Shape("one input vector per agent required".into()));
    }
    let dim = x.first().map_or(0, Vec::len);
    if inputs
        .iter()
        .any(|input| input.iter().any(|&(d, _)| d >= dim))
    {
        return Err(Error::Shape("input index exceeds state dimension".into()));
    }
    let mut next = x.clone();
    for i in 0..n {
        let xi = &x[i];
        let out = &mut next[i];
        for k in 0..n {
            if k == i {
                continue;
            }
            let w = graph.weight(i, k);
            if w == 0.0 {
                continue;
            }
            let xk = &x[k];
            for d in 0..dim {
                out[d] += w * (xk[d] - xi[d]);
            }
        }
        for &(d, v) in &inputs[i] {
            out[d] += v;
        }
    }
    *x = next;
    Ok(())
}

/// Tracking error bounds for a graph schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingBounds {
    /// Bound on each agent's distance to the running average signal.
    pub delta_q: f64,
    /// Bound for the difference-driven (gradient) tracker.
    pub delta_omega: f64,
    /// Worst second-largest singular value across the schedule.
    pub max_sigma2: f64,
    /// Set when the schedule never contracts (max sigma2 reaches 1).
    pub disconnected: bool,
}

/// Evaluate `2 sqrt(N) r_max / (1 - max_t sigma2)` and its difference-input
/// counterpart over a schedule. A schedule whose worst tick does not
/// contract yields infinite bounds and the `disconnected` flag.
pub fn error_bounds(graphs: &[CommGraph], r_max: f64, dr_max: f64) -> Result<TrackingBounds> {
    if graphs.is_empty() {
        return Err(Error::Config("bounds need at least one graph tick".into()));
    }
    let n = graphs[0].n_agents();
    if graphs.iter().any(|g| g.n_agents() != n) {
        return Err(Error::Shape(
            "all ticks must have the same agent count".into(),
        ));
    }
    let max_sigma2 = graphs.iter().map(CommGraph::sigma2).fold(0.0, f64::max);
    bounds_from_sigma(max_sigma2, n, r_max, dr_max)
}

/// The bound formulas given a schedule's worst second singular value.
pub fn bounds_from_sigma(
    max_sigma2: f64,
    n_agents: usize,
    r_max: f64,
    dr_max: f64,
) -> Result<TrackingBounds> {
    if r_max < 0.0 || dr_max < 0.0 {
        return Err(Error::Config("r_max and dr_max must be nonnegative".into()));
    }
    let gap = 1.0 - max_sigma2;
    let scale = 2.0 * (n_agents as f64).sqrt();
    if gap <= 1e-12 {
        return Ok(TrackingBounds {
            delta_q: if r_max == 0.0 { 0.0 } else { f64::INFINITY },
            delta_omega: if dr_max == 0.0 { 0.0 } else { f64::INFINITY },
            max_sigma2,
            disconnected: true,
        });
    }
    Ok(TrackingBounds {
        delta_q: scale * r_max / gap,
        delta_omega: scale * dr_max / gap,
        max_sigma2,
        disconnected: false,
    })
}

/// True when every window of `b` consecutive ticks has a strongly connected
/// edge-set union. Schedules shorter than `b` are checked as one window.
pub fn check_periodic_connectivity(graphs: &[CommGraph], b: usize) -> bool {
    if graphs.is_empty() || b == 0 {
        return false;
    }
    let n = graphs[0].n_agents();
    if graphs.iter().any(|g| g.n_agents() != n) {
        return false;
    }
    let windows = graphs.len().saturating_sub(b).wrapping_add(1).max(1);
    for start in 0..windows.min(graphs.len()) {
        let end = (start + b).min(graphs.len());
        let mut union = vec![false; n * n];
        for g in &graphs[start..end] {
            for (i, j, _) in g.edges() {
                union[i * n + j] = true;
            }
        }
        if !strongly_connected(&union, n) {
            return false;
        }
    }
    true
}

fn strongly_connected(adj: &[bool], n: usize) -> bool {
    if n <= 1 {
        return true;
    }
    let reach = |forward: bool| -> usize {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let edge = if forward {
                    adj[u * n + v]
                } else {
                    adj[v * n + u]
                };
                if edge && !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count
    };
    reach(true) == n && reach(false) == n
}

/// Write a schedule as `tick,i,j,weight` rows (diagonal included) so a run's
/// communication pattern can be reloaded exactly.
pub fn export_schedule<W: Write>(graphs: &[CommGraph], mut out: W) -> Result<()> {
    writeln!(out, "tick,i,j,weight")?;
    for (t, g) in graphs.iter().enumerate() {
        let n = g.n_agents();
        for i in 0..n {
            for j in 0..n {
                let w = g.weight(i, j);
                if w != 0.0 {
                    writeln!(out, "{t},{i},{j},{w}")?;
                }
            }
        }
    }
    Ok(())
}

/// Parse a schedule produced by `export_schedule`.
pub fn import_schedule<R: std::io::BufRead>(reader: R) -> Result<Vec<CommGraph>> {
    let mut entries: Vec<(usize, usize, usize, f64)> = Vec::new();
    let mut n = 0usize;
    let mut ticks = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = |m: &str| Error::Parse {
            row: idx + 1,
            message: m.into(),
        };
        if fields.len() != 4 {
            return Err(parse_err("expected tick,i,j,weight"));
        }
        let t: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err("bad tick"))?;
        let i: usize = fields[1].trim().parse().map_err(|_| parse_err("bad i"))?;
        let j: usize = fields[2].trim().parse().map_err(|_| parse_err("bad j"))?;
        let w: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err("bad weight"))?;
        n = n.max(i + 1).max(j + 1);
        ticks = ticks.max(t + 1);
        entries.push((t, i, j, w));
    }
    if entries.is_empty() {
        return Err(Error::Parse {
            row: 1,
            message: "empty schedule".into(),
        });
    }
    let mut mats = vec![Mat::zeros(n, n); ticks];
    for (t, i, j, w) in entries {
        mats[t].set(i, j, w);
    }
    mats.into_iter().map(CommGraph::from_weights).collect()
}

// ---------------------------------------------------------------------------
// Singular values via cyclic Jacobi on A^T A
// ---------------------------------------------------------------------------

/// Singular values of a square matrix, unordered: square roots of the
/// eigenvalues of the symmetric positive semidefinite `A^T A`.
pub fn singular_values(a: &Mat) -> Vec<f64> {
    let n = a.n_rows();
    debug_assert_eq!(n, a.n_cols());
    // B = A^T A
    let mut b = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a.get(k, i) * a.get(k, j);
            }
            b.set(i, j, acc);
        }
    }
    symmetric_eigenvalues(&mut b)
        .into_iter()
        .map(|ev| ev.max(0.0).sqrt())
        .collect()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn symmetric_eigenvalues(b: &mut Mat) -> Vec<f64> {
    let n = b.n_rows();
    if n == 1 {
        return vec![b.get(0, 0)];
    }
    let scale: f64 = (0..n)
        .map(|i| (0..n).map(|j| b.get(i, j).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
        .max(1.0);
    let tol = 1e-14 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(b.get(p, q).abs());
            }
        }
        if off < tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = b.get(p, q);
                if apq.abs() < tol {
                    continue;
                }
                let app = b.get(p, p);
                let aqq = b.get(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let bkp = b.get(k, p);
                    let bkq = b.get(k, q);
                    b.set(k, p, c * bkp - s * bkq);
                    b.set(k, q, s * bkp + c * bkq);
                }
                for k in 0..n {
                    let bpk = b.get(p, k);
                    let bqk = b.get(q, k);
                    b.set(p, k, c * bpk - s * bqk);
                    b.set(q, k, s * bpk + c * bqk);
                }
            }
        }
    }
    (0..n).map(|i| b.get(i, i)).collect()
}
