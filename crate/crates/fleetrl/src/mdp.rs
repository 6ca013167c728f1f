//! Cell-level decision process and its planner.
//!
//! From a demand model we build, per cell, two kinds of transition rows:
//!
//! * chosen rows — committing to "move to cell j" succeeds deterministically
//!   and pays the average reward of that trip;
//! * a drift row — cells where the agent has no pending choice follow the
//!   request distribution: it departs to `k` with probability `L[i][k]` and
//!   otherwise stays put.
//!
//! The planner solves one focused problem per cell `l` (full action set at
//! `l`, drift rows everywhere else) with modified policy iteration, reusing
//! the previous cell's value function as a warm start, and aggregates the
//! focused Q-rows into one flat table.

use std::sync::Arc;

use crate::demand::DemandModel;
use crate::error::{Error, Result};
use crate::grid::CellId;
use crate::matrix::Mat;
use crate::qtable::{QIndexMap, QTable, RankedPolicy};

pub const DEFAULT_GAMMA: f64 = 0.8;
pub const DEFAULT_EVAL_SWEEPS: usize = 10;
pub const DEFAULT_TOL: f64 = 1e-8;
const MAX_OUTER_ITERATIONS: usize = 10_000;

/// Options for model construction.
#[derive(Debug, Clone, Copy, Default)]
pub struct MdpOptions {
    /// Drop actions toward destinations with zero request probability
    /// (the self action is always kept).
    pub sparsify: bool,
}

/// The planning model: chosen-action rewards plus drift dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    map: Arc<QIndexMap>,
    gamma: f64,
    /// Reward of committing to each (cell, destination) pair, flat-indexed.
    chosen_reward: Vec<f64>,
    /// Transition distribution of the single drift action per cell.
    drift_p: Mat,
    /// Per-successor reward under the drift action.
    drift_r: Mat,
}

impl MdpModel {
    /// Assemble a model directly from its parts. Drift rows must be
    /// distributions over successors.
    pub fn from_parts(
        map: Arc<QIndexMap>,
        gamma: f64,
        chosen_reward: Vec<f64>,
        drift_p: Mat,
        drift_r: Mat,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) || gamma <= 0.0 {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        let n = map.n_q();
        if chosen_reward.len() != map.len() {
            return Err(Error::Shape(
                "chosen_reward length disagrees with index map".into(),
            ));
        }
        if drift_p.n_rows() != n || drift_p.n_cols() != n || !drift_p.same_shape(&drift_r) {
            return Err(Error::Shape(format!("drift matrices must be {n}x{n}")));
        }
        for i in 0..n {
            let mut sum = 0.0;
            for k in 0..n {
                let p = drift_p.get(i, k);
                if !(-1e-12..=1.0 + 1e-12).contains(&p) {
                    return Err(Error::Model(format!(
                        "drift P[{i}][{k}] = {p} outside [0, 1]"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Model(format!(
                    "drift row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(MdpModel {
            map,
            gamma,
            chosen_reward,
            drift_p,
            drift_r,
        })
    }

    pub fn n_q(&self) -> usize {
        self.map.n_q()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn map(&self) -> &Arc<QIndexMap> {
        &self.map
    }

    /// Reward of committing to `l -> dest`.
    pub fn chosen_reward(&self, l: CellId, dest: usize) -> Result<f64> {
        Ok(self.chosen_reward[self.map.pair(l, dest)?])
    }

    /// Transition probability of the chosen action `l -> dest` landing in `k`.
    pub fn chosen_p(&self, _l: CellId, dest: usize, k: usize) -> f64 {
        if dest == k {
            1.0
        } else {
            0.0
        }
    }

    pub fn drift_row(&self, i: usize) -> &[f64] {
        self.drift_p.row(i)
    }

    pub fn drift_reward_row(&self, i: usize) -> &[f64] {
        self.drift_r.row(i)
    }

    /// Largest deviation of any transition row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n_q() {
            let sum: f64 = self.drift_p.row(i).iter().sum();
            worst = worst.max((sum - 1.0).abs());
        }
        // chosen rows are exact unit vectors by construction
        worst
    }
}

/// Build the planning model from demand parameters.
pub fn build_mdp(dm: &DemandModel, gamma: f64) -> Result<MdpModel> {
    build_mdp_with(dm, gamma, MdpOptions::default())
}

pub fn build_mdp_with(dm: &DemandModel, gamma: f64, opts: MdpOptions) -> Result<MdpModel> {
    dm.validate()?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    let n = dm.n_q;
    let actions: Vec<Vec<usize>> = (0..n)
        .map(|l| {
            if opts.sparsify {
                (0..n).filter(|&j| j == l || dm.l.get(l, j) > 0.0).collect()
            } else {
                (0..n).collect()
            }
        })
        .collect();
    let map = Arc::new(QIndexMap::new(actions)?);

    // stay probability written as 1 - sum of outgoing rates so drift rows
    // sum to 1 to machine precision
    let mut stay = vec![0.0; n];
    for i in 0..n {
        let off: f64 = (0..n).filter(|&k| k != i).map(|k| dm.l.get(i, k)).sum();
        let denom = 1.0 - off;
        if denom <= 0.0 {
            return Err(Error::Model(format!(
                "cell {i}: stay probability 1 + L[{i}][{i}] - sum_k L[{i}][k] = {denom} is not positive"
            )));
        }
        stay[i] = denom;
    }

    let mut chosen_reward = vec![0.0; map.len()];
    for l in 0..n {
        for &j in map.actions(CellId(l)) {
            let r = if l == j {
                dm.l.get(l, l) * dm.d.get(l, l) / stay[l]
            } else {
                dm.d.get(l, j)
            };
            chosen_reward[map.pair(CellId(l), j)?] = r;
        }
    }

    let mut drift_p = Mat::zeros(n, n);
    let mut drift_r = Mat::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            if k == i {
                drift_p.set(i, i, stay[i]);
                drift_r.set(i, i, dm.l.get(i, i) * dm.d.get(i, i) / stay[i]);
            } else {
                drift_p.set(i, k, dm.l.get(i, k));
                drift_r.set(i, k, dm.d.get(i, k));
            }
        }
    }
    MdpModel::from_parts(map, gamma, chosen_reward, drift_p, drift_r)
}

/// One Bellman optimality backup of the focused problem at cell `l`.
/// `w` maps states to their best available value.
fn backup_focus(mdp: &MdpModel, l: usize, w: &[f64], out: &mut [f64]) {
    let n = mdp.n_q();
    let gamma = mdp.gamma;
    for i in 0..n {
        if i == l {
            let mut best = f64::NEG_INFINITY;
            for &dest in mdp.map.actions(CellId(l)) {
                let q = mdp.chosen_reward[mdp.map.pair(CellId(l), dest).unwrap()] + gamma * w[dest];
                if q > best {
                    best = q;
                }
            }
            out[l] = best;
        } else {
            let mut acc = 0.0;
            for k in 0..n {
                let p = mdp.drift_p.get(i, k);
                if p > 0.0 {
                    acc += p * (mdp.drift_r.get(i, k) + gamma * w[k]);
                }
            }
            out[i] = acc;
        }
    }
}

fn solve_focus(
    mdp: &MdpModel,
    l: usize,
    eval_sweeps: usize,
    tol: f64,
    warm: &[f64],
) -> Result<Vec<f64>> {
    let n = mdp.n_q();
    let gamma = mdp.gamma;
    let dests = mdp.map.actions(CellId(l));
    let block = mdp.map.block(CellId(l));
    let mut w = warm.to_vec();
    let mut w_next = vec![0.0; n];
    let mut residual = f64::INFINITY;

    for _iter in 0..MAX_OUTER_ITERATIONS {
        // greedy policy at the focus cell (ties to the smallest destination)
        let mut pi = dests[0];
        let mut best = f64::NEG_INFINITY;
        for &dest in dests {
            let q = mdp.chosen_reward[block.start + rank_of(dests, dest)] + gamma * w[dest];
            if q > best {
                best = q;
                pi = dest;
            }
        }
        // truncated policy evaluation
        for _ in 0..eval_sweeps {
            for i in 0..n {
                if i == l {
                    w_next[l] = mdp.chosen_reward[block.start + rank_of(dests, pi)] + gamma * w[pi];
                } else {
                    let mut acc = 0.0;
                    for k in 0..n {
                        let p = mdp.drift_p.get(i, k);
                        if p > 0.0 {
                            acc += p * (mdp.drift_r.get(i, k) + gamma * w[k]);
                        }
                    }
                    w_next[i] = acc;
                }
            }
            std::mem::swap(&mut w, &mut w_next);
        }
        // optimality residual; the Q-residual is within a factor gamma of it
        backup_focus(mdp, l, &w, &mut w_next);
        residual = w
            .iter()
            .zip(&*w_next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual < tol {
            return Ok(w);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_OUTER_ITERATIONS,
        residual,
    })
}

#[inline]
fn rank_of(dests: &[usize], dest: usize) -> usize {
    dests
        .binary_search(&dest)
        .expect("destination present in action set")
}

/// Solve every focused problem and aggregate the results.
///
/// The returned table holds, for each pair `(l, j)`, the value of committing
/// to `l -> j` while future cells follow the drift dynamics; the ranked
/// policy sorts each cell's destinations by that value.
pub fn solve_mpi(mdp: &MdpModel, eval_sweeps: usize, tol: f64) -> Result<(QTable, RankedPolicy)> {
    if eval_sweeps == 0 {
        return Err(Error::Config("eval_sweeps must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Config("tol must be positive".into()));
    }
    let n = mdp.n_q();
    let mut q = QTable::zeros(Arc::clone(&mdp.map));
    let mut warm = vec![0.0; n];
    for l in 0..n {
        let w = solve_focus(mdp, l, eval_sweeps, tol, &warm)?;
        let block = mdp.map.block(CellId(l));
        for (rank, &dest) in mdp.map.actions(CellId(l)).iter().enumerate() {
            q.values_mut()[block.start + rank] =
                mdp.chosen_reward[block.start + rank] + mdp.gamma * w[dest];
        }
        warm = w;
    }
    let ranked = RankedPolicy::from_qtable(&q);
    Ok((q, ranked))
}

/// Worst-case deviation bound of stationary planning values under model
/// drift: `d = eps * gamma * r_inf / (1 - gamma)^2 + delta / (1 - gamma)`
/// and `kappa = 4 d / (1 - gamma)`.
pub fn kappa_bound(epsilon: f64, delta: f64, gamma: f64, r_inf: f64) -> Result<(f64, f64)> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    if epsilon < 0.0 || delta < 0.0 || r_inf < 0.0 {
        return Err(Error::Config(
            "epsilon, delta and r_inf must be nonnegative".into(),
        ));
    }
    let one_minus = 1.0 - gamma;
    let d = epsilon * gamma * r_inf / (one_minus * one_minus) + delta / one_minus;
    let kappa = 4.0 * d / one_minus;
    Ok((d, kappa))
}

/// Elementwise max-norm distance between two models' transition and reward
/// data: `(max |P_a - P_b|, max |R_a - R_b|)`.
pub fn model_drift(a: &MdpModel, b: &MdpModel) -> Result<(f64, f64)> {
    if a.map.as_ref() != b.map.as_ref() {
        return Err(Error::Shape(
            "models have different action structures".into(),
        ));
    }
    // chosen transitions are identical unit vectors on both sides
    let epsilon = a.drift_p.max_abs_diff(&b.drift_p)?;
    let mut delta = a.drift_r.max_abs_diff(&b.drift_r)?;
    for (x, y) in a.chosen_reward.iter().zip(&b.chosen_reward) {
        delta = delta.max((x - y).abs());
    }
    Ok((epsilon, delta))
}
