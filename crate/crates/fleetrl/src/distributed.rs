//! Fleet-wide distributed SARSA over a communication graph.
//!
//! Every agent keeps its own copy of the Q vector plus a tracked gradient
//! estimate `omega` and the moving averages behind its adaptive rate. Each
//! tick runs one synchronous round:
//!
//! 1. agents with a fresh drop-off compute the correction `r` from their own
//!    estimates and read their current rate `alpha` at the observed pair;
//! 2. the Q estimates take a consensus step driven by the `N * alpha * r`
//!    impulses;
//! 3. the gradient estimates take a consensus step driven by the difference
//!    of consecutive `N * r` impulses;
//! 4. the rate averages fold in the freshly tracked gradient and the alpha
//!    vector is refreshed, clamped to `[0, 1]`.
//!
//! A fleet of one agent reduces tick-for-tick to `CentralTickLearner`, the
//! single-node learner that fuses all observations — the same arithmetic
//! without the graph machinery.

use std::sync::Arc;

use crate::consensus::{track_step_vectors, CommGraph, SparseVec};
use crate::error::{Error, Result};
use crate::qtable::{QIndexMap, QTable};
use crate::sarsa::{clamp_alpha, loss_gradient_raw, SarsaUpdateEvent};

/// One agent's learning state. All vectors share the fleet's index map.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentLearnState {
    /// Local estimate of the Q vector.
    pub q_hat: Vec<f64>,
    /// Tracked estimate of the fleet-average update gradient.
    pub omega: Vec<f64>,
    /// Moving average of omega.
    pub f_hat: Vec<f64>,
    /// Moving average of omega squared.
    pub g_hat: Vec<f64>,
    /// Current per-pair learning rate, `f_hat^2 / g_hat` clamped to [0, 1].
    pub alpha: Vec<f64>,
    /// Previous tick's observation (pair, correction), if any.
    pub last_obs: Option<(usize, f64)>,
}

impl AgentLearnState {
    fn new(warm_start: &[f64]) -> Self {
        let dim = warm_start.len();
        AgentLearnState {
            q_hat: warm_start.to_vec(),
            omega: vec![0.0; dim],
            f_hat: vec![1.0; dim],
            g_hat: vec![1.0; dim],
            alpha: vec![1.0; dim],
            last_obs: None,
        }
    }
}

/// The SARSA correction an agent derives from its own estimates:
/// `r = reward + gamma * Q_hat(j, pi[j]) - Q_hat(l, a)`, zero with no event.
pub fn local_correction(
    map: &QIndexMap,
    agent: &AgentLearnState,
    ev: Option<&SarsaUpdateEvent>,
    gamma: f64,
) -> Result<(f64, Option<usize>)> {
    match ev {
        None => Ok((0.0, None)),
        Some(ev) => {
            let pair = map.pair(ev.state, ev.action)?;
            let r = -loss_gradient_raw(map, &agent.q_hat, ev, gamma)?;
            Ok((r, Some(pair)))
        }
    }
}

fn ema_toward(dst: &mut [f64], src: &[f64], zeta: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += zeta * (s - *d);
    }
}

fn ema_toward_square(dst: &mut [f64], src: &[f64], zeta: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += zeta * (s * s - *d);
    }
}

fn refresh_alpha(alpha: &mut [f64], f: &[f64], g: &[f64]) {
    for ((a, &fv), &gv) in alpha.iter_mut().zip(f).zip(g) {
        *a = clamp_alpha(fv, gv).0;
    }
}

/// Telemetry entry for one observation in one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnTelemetry {
    pub agent: usize,
    pub pair: usize,
    pub r: f64,
    pub alpha: f64,
}

/// All agents' learning states plus fleet-level bookkeeping.
#[derive(Debug, Clone)]
pub struct DistributedFleet {
    map: Arc<QIndexMap>,
    gamma: f64,
    zeta: f64,
    agents: Vec<AgentLearnState>,
    /// Entrywise sum of every Q-side impulse injected so far.
    input_sum: Vec<f64>,
    /// Largest |N * alpha * r| impulse seen.
    pub max_q_input: f64,
    /// Largest omega-side impulse component seen.
    pub max_omega_input: f64,
}

impl DistributedFleet {
    pub fn new(n_agents: usize, warm_start: &QTable, gamma: f64, zeta: f64) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::Config("fleet needs at least one agent".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(Error::Config(format!(
                "zeta must lie in (0, 1), got {zeta}"
            )));
        }
        let agents = (0..n_agents)
            .map(|_| AgentLearnState::new(warm_start.values()))
            .collect();
        Ok(DistributedFleet {
            map: Arc::clone(warm_start.map()),
            gamma,
            zeta,
            agents,
            input_sum: vec![0.0; warm_start.map().len()],
            max_q_input: 0.0,
            max_omega_input: 0.0,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn map(&self) -> &Arc<QIndexMap> {
        &self.map
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn agent(&self, i: usize) -> &AgentLearnState {
        &self.agents[i]
    }

    pub fn agent_q(&self, i: usize) -> &[f64] {
        &self.agents[i].q_hat
    }

    /// Entrywise mean of the agents' Q estimates.
    pub fn mean_q(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.map.len()];
        for a in &self.agents {
            for (o, v) in out.iter_mut().zip(&a.q_hat) {
                *o += v;
            }
        }
        let n = self.agents.len() as f64;
        for o in &mut out {
            *o /= n;
        }
        out
    }

    /// Running mean input: `(1/N) * sum over ticks and agents` of the
    /// injected impulses. The agent average of Q estimates must track the
    /// warm start plus this vector.
    pub fn mean_input(&self) -> Vec<f64> {
        let n = self.agents.len() as f64;
        self.input_sum.iter().map(|v| v / n).collect()
    }

    /// Largest entrywise spread of Q estimates across agents, the max
    /// pairwise infinity-norm disagreement.
    pub fn disagreement(&self) -> f64 {
        let dim = self.map.len();
        let mut worst = 0.0f64;
        for d in 0..dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for a in &self.agents {
                lo = lo.min(a.q_hat[d]);
                hi = hi.max(a.q_hat[d]);
            }
            worst = worst.max(hi - lo);
        }
        worst
    }

    /// One synchronous learning round over the fleet.
    pub fn fleet_learn_tick(
        &mut self,
        graph: &CommGraph,
        events: &[Option<SarsaUpdateEvent>],
    ) -> Result<Vec<LearnTelemetry>> {
        let n = self.agents.len();
        if graph.n_agents() != n {
            return Err(Error::Shape(format!(
                "graph has {} agents, fleet has {n}",
                graph.n_agents()
            )));
        }
        if events.len() != n {
            return Err(Error::Shape("one optional event per agent required".into()));
        }
        let n_scale = n as f64;

        // stage 1: corrections and rates from each agent's own state
        let mut telemetry = Vec::new();
        let mut obs: Vec<Option<(usize, f64)>> = Vec::with_capacity(n);
        for (idx, (agent, ev)) in self.agents.iter().zip(events).enumerate() {
            let (r, pair) = local_correction(&self.map, agent, ev.as_ref(), self.gamma)?;
            match pair {
                Some(pair) => {
                    telemetry.push(LearnTelemetry {
                        agent: idx,
                        pair,
                        r,
                        alpha: agent.alpha[pair],
                    });
                    obs.push(Some((pair, r)));
                }
                None => obs.push(None),
            }
        }

        // stage 2: N-scaled, rate-weighted impulses
        let q_inputs: Vec<SparseVec> = self
            .agents
            .iter()
            .zip(&obs)
            .map(|(agent, o)| match o {
                Some((pair, r)) => {
                    let v = n_scale * agent.alpha[*pair] * r;
                    self.max_q_input = self.max_q_input.max(v.abs());
                    vec![(*pair, v)]
                }
                None => Vec::new(),
            })
            .collect();
        for input in &q_inputs {
            for &(d, v) in input {
                self.input_sum[d] += v;
            }
        }

        // stage 3: consensus + impulse on the Q estimates
        let mut q_vecs: Vec<Vec<f64>> = self.agents.iter().map(|a| a.q_hat.clone()).collect();
        track_step_vectors(&mut q_vecs, graph, &q_inputs)?;
        for (agent, q) in self.agents.iter_mut().zip(q_vecs) {
            agent.q_hat = q;
        }

        // stage 4: consensus + difference impulse on the gradient estimates
        let w_inputs: Vec<SparseVec> = self
            .agents
            .iter()
            .zip(&obs)
            .map(|(agent, o)| {
                let mut input = SparseVec::new();
                if let Some((pair, r)) = o {
                    input.push((*pair, n_scale * r));
                }
                if let Some((pair, r)) = agent.last_obs {
                    input.push((pair, -(n_scale * r)));
                }
                for &(_, v) in &input {
                    self.max_omega_input = self.max_omega_input.max(v.abs());
                }
                input
            })
            .collect();
        let mut w_vecs: Vec<Vec<f64>> = self.agents.iter().map(|a| a.omega.clone()).collect();
        track_step_vectors(&mut w_vecs, graph, &w_inputs)?;
        for (agent, w) in self.agents.iter_mut().zip(w_vecs) {
            agent.omega = w;
        }

        // stage 5: rate averages follow the tracked gradient; roll the
        // observation for the next tick's difference impulse
        for (agent, o) in self.agents.iter_mut().zip(&obs) {
            ema_toward(&mut agent.f_hat, &agent.omega, self.zeta);
            ema_toward_square(&mut agent.g_hat, &agent.omega, self.zeta);
            refresh_alpha(&mut agent.alpha, &agent.f_hat, &agent.g_hat);
            agent.last_obs = *o;
        }
        Ok(telemetry)
    }
}

/// Single-node learner that fuses every observation per tick.
///
/// This is the `N = 1` form of the fleet equations, written without the
/// graph machinery: identical update expressions, one state.
#[derive(Debug, Clone)]
pub struct CentralTickLearner {
    map: Arc<QIndexMap>,
    gamma: f64,
    zeta: f64,
    pub q: Vec<f64>,
    pub omega: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub alpha: Vec<f64>,
    last_obs: Vec<(usize, f64)>,
}

impl CentralTickLearner {
    pub fn new(warm_start: &QTable, gamma: f64, zeta: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(Error::Config(format!(
                "zeta must lie in (0, 1), got {zeta}"
            )));
        }
        let dim = warm_start.map().len();
        Ok(CentralTickLearner {
            map: Arc::clone(warm_start.map()),
            gamma,
            zeta,
            q: warm_start.values().to_vec(),
            omega: vec![0.0; dim],
            f: vec![1.0; dim],
            g: vec![1.0; dim],
            alpha: vec![1.0; dim],
            last_obs: Vec::new(),
        })
    }

    pub fn map(&self) -> &Arc<QIndexMap> {
        &self.map
    }

    /// Fold one tick's worth of observations into the fused state.
    pub fn tick(&mut self, events: &[SarsaUpdateEvent]) -> Result<Vec<LearnTelemetry>> {
        let n_scale = 1.0f64;
        // stage 1: corrections against the fused estimate
        let mut obs: Vec<(usize, f64)> = Vec::with_capacity(events.len());
        let mut telemetry = Vec::with_capacity(events.len());
        for ev in events {
            let pair = self.map.pair(ev.state, ev.action)?;
            let r = -loss_gradient_raw(&self.map, &self.q, ev, self.gamma)?;
            telemetry.push(LearnTelemetry {
                agent: 0,
                pair,
                r,
                alpha: self.alpha[pair],
            });
            obs.push((pair, r));
        }
        // stages 2-3: rate-weighted impulses straight onto the estimate
        for &(pair, r) in &obs {
            self.q[pair] += n_scale * self.alpha[pair] * r;
        }
        // stage 4: difference impulses onto the gradient estimate
        for &(pair, r) in &obs {
            self.omega[pair] += n_scale * r;
        }
        for &(pair, r) in &self.last_obs {
            self.omega[pair] += -(n_scale * r);
        }
        // stage 5: rate refresh and observation roll
        ema_toward(&mut self.f, &self.omega, self.zeta);
        ema_toward_square(&mut self.g, &self.omega, self.zeta);
        refresh_alpha(&mut self.alpha, &self.f, &self.g);
        self.last_obs = obs;
        Ok(telemetry)
    }
}
