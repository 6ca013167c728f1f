//! Distributed task assignment as a potential game.
//!
//! Each idle agent values actions — serve one request, serve a pooled pair
//! of requests, or stay idle — and plays binary log-linear learning: one
//! uniformly chosen agent per round compares its current action against one
//! uniformly drawn trial action and switches with a softmax probability at
//! temperature `tau`. Utilities are marginal contributions to the system
//! value `H` (the sum of per-agent action values under a
//! count-each-task-once conflict rule), so every unilateral utility change
//! equals the change of the potential `Phi = H` and the dynamics
//! concentrate on potential maximizers as `tau` shrinks.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demand::DemandModel;
use crate::error::{Error, Result};
use crate::grid::{CellId, GridGeometry, Point2};
use crate::qtable::QIndexMap;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_TRAVEL_COST: f64 = 20.0;
pub const DEFAULT_POOLING_PENALTY: f64 = 1.0;

/// A pick-up and delivery request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    pub pickup: Point2,
    pub pickup_cell: CellId,
    pub dropoff: Point2,
    pub dropoff_cell: CellId,
    pub fare: f64,
}

impl Task {
    pub fn new(
        id: u64,
        pickup: Point2,
        dropoff: Point2,
        fare: f64,
        geometry: &GridGeometry,
    ) -> Result<Self> {
        let pickup_cell = geometry
            .locate(pickup)
            .ok_or_else(|| Error::Model(format!("task {id}: pickup lies outside the map")))?;
        let dropoff_cell = geometry
            .locate(dropoff)
            .ok_or_else(|| Error::Model(format!("task {id}: dropoff lies outside the map")))?;
        Ok(Task {
            id,
            pickup,
            pickup_cell,
            dropoff,
            dropoff_cell,
            fare,
        })
    }

    pub fn direct_length(&self) -> f64 {
        self.pickup.dist(self.dropoff)
    }
}

/// An agent's choice: one task, an unordered pooled pair, or idle.
/// Task references are indices into the instance's task list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentAction {
    Null,
    Single(usize),
    Pooled(usize, usize),
}

impl AgentAction {
    pub fn tasks(&self) -> impl Iterator<Item = usize> + '_ {
        match *self {
            AgentAction::Null => [None, None],
            AgentAction::Single(a) => [Some(a), None],
            AgentAction::Pooled(a, b) => [Some(a), Some(b)],
        }
        .into_iter()
        .flatten()
    }
}

/// One joint assignment of all agents.
pub type ActionProfile = Vec<AgentAction>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// Sensing radius: requests are visible strictly within this distance.
    pub r_c: f64,
    /// Communication radius, at least `2 * r_c`.
    pub r_comm: f64,
    /// Travel cost per km toward a pickup.
    pub travel_cost: f64,
    /// Detour penalty exponent for pooled pairs.
    pub pooling_penalty: f64,
    /// Exploration temperature of the learning dynamics.
    pub tau: f64,
    /// Offer pooled pairs in the action sets.
    pub pooling: bool,
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_c > 0.0) {
            return Err(Error::Config("r_c must be positive".into()));
        }
        if self.r_comm < 2.0 * self.r_c {
            return Err(Error::Config(format!(
                "r_comm = {} must be at least 2 * r_c = {}",
                self.r_comm,
                2.0 * self.r_c
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(self.travel_cost >= 0.0) || !(self.pooling_penalty >= 0.0) {
            return Err(Error::Config("cost constants must be nonnegative".into()));
        }
        Ok(())
    }
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            r_c: 1.5,
            r_comm: 3.0,
            travel_cost: DEFAULT_TRAVEL_COST,
            pooling_penalty: DEFAULT_POOLING_PENALTY,
            tau: DEFAULT_TAU,
            pooling: false,
        }
    }
}

/// Actions available to an agent at `pos`: the null action, every task
/// strictly within the sensing radius, and (with pooling) every unordered
/// pair of those.
pub fn available_tasks(
    pos: Point2,
    tasks: &[Task],
    cfg: &GameConfig,
    pooling: bool,
) -> Vec<AgentAction> {
    let mut actions = vec![AgentAction::Null];
    let sensed: Vec<usize> = tasks
        .iter()
        .enumerate()
        .filter(|(_, t)| pos.dist(t.pickup) < cfg.r_c)
        .map(|(i, _)| i)
        .collect();
    actions.extend(sensed.iter().map(|&i| AgentAction::Single(i)));
    if pooling {
        for (a_rank, &a) in sensed.iter().enumerate() {
            for &b in &sensed[a_rank + 1..] {
                actions.push(AgentAction::Pooled(a, b));
            }
        }
    }
    actions
}

/// How actions are scored.
#[derive(Debug, Clone, Copy)]
pub enum Utility<'a> {
    /// Long-run value: Q at the pickup cell plus the expected immediate
    /// reward minus the travel cost (pooled pairs get the detour discount).
    QBased {
        map: &'a QIndexMap,
        qs: &'a [&'a [f64]],
        demand: &'a DemandModel,
    },
    /// Expected immediate reward only.
    Greedy { demand: &'a DemandModel },
    /// Proximity only: `r_c` minus the distance to the (nearest) pickup.
    ShortestPath,
}

/// A full game instance: idle agents, visible tasks, per-agent action sets.
#[derive(Debug, Clone)]
pub struct GameInstance<'a> {
    pub positions: &'a [Point2],
    pub cells: Vec<CellId>,
    pub tasks: &'a [Task],
    pub cfg: &'a GameConfig,
    pub available: Vec<Vec<AgentAction>>,
}

impl<'a> GameInstance<'a> {
    pub fn new(
        positions: &'a [Point2],
        tasks: &'a [Task],
        cfg: &'a GameConfig,
        geometry: &GridGeometry,
    ) -> Result<Self> {
        cfg.validate()?;
        let cells = positions
            .iter()
            .map(|p| {
                geometry
                    .locate(*p)
                    .ok_or_else(|| Error::Model("agent position outside the map".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let available = positions
            .iter()
            .map(|p| available_tasks(*p, tasks, cfg, cfg.pooling))
            .collect();
        Ok(GameInstance {
            positions,
            cells,
            tasks,
            cfg,
            available,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.positions.len()
    }
}

fn q_at(map: &QIndexMap, q: &[f64], cell: CellId, dest: usize) -> f64 {
    map.pair(cell, dest).map(|i| q[i]).unwrap_or(0.0)
}

/// Action value `h` for one agent. The null action is worth exactly zero.
pub fn task_value(
    inst: &GameInstance,
    utility: &Utility,
    agent: usize,
    action: AgentAction,
) -> f64 {
    let pos = inst.positions[agent];
    match action {
        AgentAction::Null => 0.0,
        AgentAction::Single(t) => {
            let task = &inst.tasks[t];
            let j = task.pickup_cell;
            let l = task.dropoff_cell.0;
            let approach = pos.dist(task.pickup);
            match utility {
                Utility::QBased { map, qs, demand } => {
                    q_at(map, qs[agent], j, l) + demand.expected_reward(j.0, l)
                        - inst.cfg.travel_cost * approach
                }
                Utility::Greedy { demand } => demand.expected_reward(j.0, l),
                Utility::ShortestPath => inst.cfg.r_c - approach,
            }
        }
        AgentAction::Pooled(a, b) => {
            let (ta, tb) = (&inst.tasks[a], &inst.tasks[b]);
            let (da, db) = (pos.dist(ta.pickup), pos.dist(tb.pickup));
            // first pickup: nearer task, ties to the lower index
            let (p1, p2) = if da <= db { (ta, tb) } else { (tb, ta) };
            // first dropoff: the one nearer to the second pickup,
            // ties to the lower-index task's dropoff
            let (d1, d2) = {
                let (la, lb) = (p2.pickup.dist(ta.dropoff), p2.pickup.dist(tb.dropoff));
                if la <= lb {
                    (ta, tb)
                } else {
                    (tb, ta)
                }
            };
            let approach = pos.dist(p1.pickup);
            match utility {
                Utility::QBased { map, qs, demand } => {
                    let path = approach
                        + p1.pickup.dist(p2.pickup)
                        + p2.pickup.dist(d1.dropoff)
                        + d1.dropoff.dist(d2.dropoff);
                    let direct = ta.direct_length().min(tb.direct_length());
                    if direct <= 0.0 {
                        return 0.0;
                    }
                    let beta = path / direct - 1.0;
                    let agent_cell = inst.cells[agent];
                    (-inst.cfg.pooling_penalty * beta).exp()
                        * (q_at(map, qs[agent], agent_cell, d2.dropoff_cell.0)
                            + demand.expected_reward(ta.pickup_cell.0, ta.dropoff_cell.0)
                            + demand.expected_reward(tb.pickup_cell.0, tb.dropoff_cell.0)
                            - inst.cfg.travel_cost * approach)
                }
                Utility::Greedy { demand } => {
                    demand.expected_reward(ta.pickup_cell.0, ta.dropoff_cell.0)
                        + demand.expected_reward(tb.pickup_cell.0, tb.dropoff_cell.0)
                }
                Utility::ShortestPath => inst.cfg.r_c - da.min(db),
            }
        }
    }
}

/// System value `H`: sum of action values under the conflict rule. A task
/// claimed by several agents is owned by the one closest to its pickup
/// (ties to the lower agent id); an agent that does not own every task of
/// its action contributes nothing.
pub fn system_value(inst: &GameInstance, utility: &Utility, profile: &ActionProfile) -> f64 {
    let mut owner: Vec<Option<usize>> = vec![None; inst.tasks.len()];
    for (i, action) in profile.iter().enumerate() {
        for t in action.tasks() {
            let better = match owner[t] {
                None => true,
                Some(cur) => {
                    let d_new = inst.positions[i].dist(inst.tasks[t].pickup);
                    let d_cur = inst.positions[cur].dist(inst.tasks[t].pickup);
                    d_new < d_cur || (d_new == d_cur && i < cur)
                }
            };
            if better {
                owner[t] = Some(i);
            }
        }
    }
    profile
        .iter()
        .enumerate()
        .map(|(i, &action)| {
            if action.tasks().all(|t| owner[t] == Some(i)) {
                task_value(inst, utility, i, action)
            } else {
                0.0
            }
        })
        .sum()
}

/// Marginal contribution of `candidate` for `agent`, holding everyone else
/// fixed: `H(candidate, u_-i) - H(null, u_-i)`.
pub fn wlu(
    inst: &GameInstance,
    utility: &Utility,
    profile: &ActionProfile,
    agent: usize,
    candidate: AgentAction,
) -> f64 {
    let mut with = profile.clone();
    with[agent] = candidate;
    let mut without = profile.clone();
    without[agent] = AgentAction::Null;
    system_value(inst, utility, &with) - system_value(inst, utility, &without)
}

/// Executable potential-game identity: a unilateral switch changes the
/// potential exactly as much as it changes the switching agent's utility.
pub fn potential_identity_check(
    inst: &GameInstance,
    utility: &Utility,
    profile: &ActionProfile,
    agent: usize,
    action_a: AgentAction,
    action_b: AgentAction,
) -> bool {
    let mut with_a = profile.clone();
    with_a[agent] = action_a;
    let mut with_b = profile.clone();
    with_b[agent] = action_b;
    let delta_phi = system_value(inst, utility, &with_b) - system_value(inst, utility, &with_a);
    let delta_j =
        wlu(inst, utility, &with_a, agent, action_b) - wlu(inst, utility, &with_a, agent, action_a);
    (delta_phi - delta_j).abs() <= 1e-9
}

/// One learning round: a uniformly chosen agent draws one trial action
/// uniformly from its set and switches with the binary softmax probability.
/// Returns whether the profile changed.
pub fn bll_round(
    inst: &GameInstance,
    utility: &Utility,
    profile: &mut ActionProfile,
    rng: &mut ChaCha8Rng,
) -> bool {
    let agent = rng.gen_range(0..inst.n_agents());
    let actions = &inst.available[agent];
    let trial = actions[rng.gen_range(0..actions.len())];
    let current = profile[agent];
    if trial == current {
        return false;
    }
    let j_current = wlu(inst, utility, profile, agent, current);
    let j_trial = wlu(inst, utility, profile, agent, trial);
    // switch probability exp(J_trial/tau) / (exp(J_cur/tau) + exp(J_trial/tau)),
    // evaluated as a stable sigmoid
    let p_switch = 1.0 / (1.0 + ((j_current - j_trial) / inst.cfg.tau).exp());
    if rng.gen::<f64>() < p_switch {
        profile[agent] = trial;
        return true;
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopRule {
    /// Stop after this many consecutive rounds without an action change.
    pub stable_rounds: usize,
    /// Hard cap on rounds.
    pub max_rounds: usize,
}

impl StopRule {
    /// Quick defaults scaled by fleet size: `W = 3N`, `K = 500N`. Suited to
    /// a simulator that re-runs the game every tick and only needs a decent
    /// profile fast.
    pub fn for_agents(n: usize) -> Self {
        StopRule {
            stable_rounds: 3 * n.max(1),
            max_rounds: 500 * n.max(1),
        }
    }

    /// Patient rule for runs that should settle on a potential maximizer:
    /// the quiet window scales with how many draws it takes every agent to
    /// try every action, otherwise the chain can stop mid-exploration.
    pub fn thorough(n_agents: usize, max_actions: usize) -> Self {
        let n = n_agents.max(1);
        let span = n * max_actions.max(2);
        StopRule {
            stable_rounds: 10 * span,
            max_rounds: 500 * n * max_actions.max(2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AssignmentOutcome {
    pub profile: ActionProfile,
    /// Potential after each round.
    pub potential_trace: Vec<f64>,
    pub rounds: usize,
    pub converged: bool,
}

/// Run the learning dynamics from the all-null profile until the stop rule
/// fires, then strip every agent that lost a conflict. With the round cap
/// exhausted the best-potential profile seen is returned instead, flagged
/// as non-converged.
pub fn run_assignment(
    inst: &GameInstance,
    utility: &Utility,
    seed: u64,
    stop: StopRule,
) -> AssignmentOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profile: ActionProfile = vec![AgentAction::Null; inst.n_agents()];
    let mut trace = Vec::new();
    let mut best_profile = profile.clone();
    let mut best_phi = system_value(inst, utility, &profile);
    let mut stable = 0usize;
    let mut rounds = 0usize;
    let mut converged = false;

    while rounds < stop.max_rounds {
        let changed = bll_round(inst, utility, &mut profile, &mut rng);
        rounds += 1;
        let phi = system_value(inst, utility, &profile);
        trace.push(phi);
        if phi > best_phi {
            best_phi = phi;
            best_profile = profile.clone();
        }
        stable = if changed { 0 } else { stable + 1 };
        if stable >= stop.stable_rounds {
            converged = true;
            break;
        }
    }
    let mut outcome = if converged { profile } else { best_profile };
    resolve_conflicts(inst, &mut outcome);
    AssignmentOutcome {
        profile: outcome,
        potential_trace: trace,
        rounds,
        converged,
    }
}

/// Demote every agent that does not own all tasks of its action. Ownership
/// follows the same closest-agent rule as the system value, so this never
/// changes the potential.
fn resolve_conflicts(inst: &GameInstance, profile: &mut ActionProfile) {
    let mut owner: Vec<Option<usize>> = vec![None; inst.tasks.len()];
    for (i, action) in profile.iter().enumerate() {
        for t in action.tasks() {
            let better = match owner[t] {
                None => true,
                Some(cur) => {
                    let d_new = inst.positions[i].dist(inst.tasks[t].pickup);
                    let d_cur = inst.positions[cur].dist(inst.tasks[t].pickup);
                    d_new < d_cur || (d_new == d_cur && i < cur)
                }
            };
            if better {
                owner[t] = Some(i);
            }
        }
    }
    for (i, action) in profile.iter_mut().enumerate() {
        if !action.tasks().all(|t| owner[t] == Some(i)) {
            *action = AgentAction::Null;
        }
    }
}

/// Write a round-indexed potential trace as delimited text.
pub fn write_potential_trace<W: Write>(trace: &[f64], mut out: W) -> Result<()> {
    writeln!(out, "round,phi")?;
    for (i, phi) in trace.iter().enumerate() {
        writeln!(out, "{i},{phi}")?;
    }
    Ok(())
}

/// On-disk game instance (agents, tasks, config, geometry).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub version: u32,
    pub geometry: GridGeometry,
    pub agents: Vec<Point2>,
    pub tasks: Vec<Task>,
    pub config: GameConfig,
}

impl InstanceFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
