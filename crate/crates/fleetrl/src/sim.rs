//! Discrete-time fleet simulator.
//!
//! Per tick: expire stale requests, spawn new ones from the demand source,
//! complete trips whose time is up, run the assignment game over idle
//! agents, fire the configured policy's learning update on fresh drop-off
//! events, and record metrics. Runs are deterministic given the seed.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::CommGraph;
use crate::demand::{
    estimate_demand, idle_observations, DemandModel, IngestReport, ScenarioSpec, SynthDemand,
    TripRecord,
};
use crate::distributed::{CentralTickLearner, DistributedFleet, LearnTelemetry};
use crate::error::{Error, Result};
use crate::game::{run_assignment, GameConfig, GameInstance, StopRule, Task, Utility};
use crate::grid::{CellId, GridGeometry, Point2};
use crate::mdp::{build_mdp, solve_mpi};
use crate::qtable::QTable;
use crate::sarsa::SarsaUpdateEvent;

/// Which decision/learning stack drives the fleet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    DistributedSarsa,
    CentralizedSarsa,
    MdpStatic,
    Greedy,
    ShortestPath,
}

impl Policy {
    pub fn needs_q(self) -> bool {
        matches!(
            self,
            Policy::DistributedSarsa | Policy::CentralizedSarsa | Policy::MdpStatic
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::DistributedSarsa => "distributed-sarsa",
            Policy::CentralizedSarsa => "centralized-sarsa",
            Policy::MdpStatic => "mdp-static",
            Policy::Greedy => "greedy",
            Policy::ShortestPath => "shortest-path",
        }
    }
}

/// Where requests come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandSource {
    Synthetic(ScenarioSpec),
    File {
        path: String,
        n_q: usize,
        geometry: GridGeometry,
        /// Observation windows covered by the file; inferred from the last
        /// timestamp when absent.
        windows: Option<u64>,
    },
}

fn default_gamma() -> f64 {
    crate::mdp::DEFAULT_GAMMA
}
fn default_zeta() -> f64 {
    crate::sarsa::DEFAULT_ZETA
}
fn default_snapshot_cadence() -> u64 {
    10
}
fn default_speed() -> f64 {
    0.5
}
fn default_expire() -> u64 {
    5
}
fn default_mpi_sweeps() -> usize {
    crate::mdp::DEFAULT_EVAL_SWEEPS
}
fn default_mpi_tol() -> f64 {
    crate::mdp::DEFAULT_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_agents: usize,
    pub horizon: u64,
    pub seed: u64,
    pub policy: Policy,
    pub demand: DemandSource,
    pub game: GameConfig,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(default = "default_snapshot_cadence")]
    pub snapshot_cadence: u64,
    /// Approach-leg speed, km per tick.
    #[serde(default = "default_speed")]
    pub speed: f64,
    /// Unserved requests disappear after this many ticks.
    #[serde(default = "default_expire")]
    pub expire_ticks: u64,
    /// State-action pairs whose values are snapshotted.
    #[serde(default)]
    pub tracked_pairs: Vec<(usize, usize)>,
    #[serde(default = "default_mpi_sweeps")]
    pub mpi_eval_sweeps: usize,
    #[serde(default = "default_mpi_tol")]
    pub mpi_tol: f64,
    /// Record the per-tick second singular value of the communication
    /// graph (distributed policy only; costs an eigensolve per tick).
    #[serde(default)]
    pub track_consensus_bounds: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1)".into()));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::Config("zeta must lie in (0, 1)".into()));
        }
        if !(self.speed > 0.0) {
            return Err(Error::Config("speed must be positive".into()));
        }
        if self.snapshot_cadence == 0 {
            return Err(Error::Config("snapshot_cadence must be at least 1".into()));
        }
        self.game.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Stable hash of the canonical config serialization, for run naming.
pub fn config_hash(cfg: &SimConfig) -> String {
    let text = serde_json::to_string(cfg).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripReturn {
    pub tick: u64,
    pub agent: usize,
    pub task_id: u64,
    pub fare: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSnapshot {
    pub tick: u64,
    pub cell: usize,
    pub dest: usize,
    /// One value per learner (per agent when distributed).
    pub values: Vec<f64>,
    /// Fused single-node trajectory fed the same events, when tracked.
    pub central: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentStat {
    pub tick: u64,
    pub idle_agents: usize,
    pub open_tasks: usize,
    pub rounds: usize,
    pub converged: bool,
    pub potential: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub policy: Policy,
    pub seed: u64,
    pub ticks_run: u64,
    pub ended_early: bool,
    /// Cumulative revenue after each tick.
    pub revenue: Vec<f64>,
    pub trip_returns: Vec<TripReturn>,
    pub q_snapshots: Vec<QSnapshot>,
    pub disagreement: Vec<(u64, f64)>,
    pub assignment_stats: Vec<AssignmentStat>,
    pub learn_log: Vec<(u64, usize, usize, f64, f64)>,
    /// Largest Q-side impulse injected (distributed runs).
    pub max_q_input: f64,
    /// Largest gradient-side impulse injected (distributed runs).
    pub max_omega_input: f64,
    /// Worst second singular value of the communication graph, when tracked.
    pub max_sigma2: Option<f64>,
    /// Ingestion stats for file-backed demand.
    pub ingest: Option<IngestReport>,
    /// Final fleet-mean Q distance from warm start plus mean inputs
    /// (distributed runs): the average-tracking identity residual.
    pub tracking_identity_residual: Option<f64>,
}

impl RunMetrics {
    pub fn total_revenue(&self) -> f64 {
        self.revenue.last().copied().unwrap_or(0.0)
    }

    pub fn final_disagreement(&self) -> Option<f64> {
        self.disagreement.last().map(|&(_, d)| d)
    }

    /// Write the delimited exports plus a summary record into `dir`.
    pub fn write_dir(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = std::fs::File::create(dir.join("revenue.csv"))?;
        writeln!(w, "tick,cumulative_revenue")?;
        for (t, r) in self.revenue.iter().enumerate() {
            writeln!(w, "{t},{r}")?;
        }
        let mut w = std::fs::File::create(dir.join("trips.csv"))?;
        writeln!(w, "tick,agent,task_id,fare,reward")?;
        for tr in &self.trip_returns {
            writeln!(
                w,
                "{},{},{},{},{}",
                tr.tick, tr.agent, tr.task_id, tr.fare, tr.reward
            )?;
        }
        let mut w = std::fs::File::create(dir.join("q_trace.csv"))?;
        writeln!(w, "tick,cell,dest,values,central")?;
        for s in &self.q_snapshots {
            let values = s
                .values
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(";");
            let central = s.central.map(|c| c.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{}", s.tick, s.cell, s.dest, values, central)?;
        }
        let mut w = std::fs::File::create(dir.join("disagreement.csv"))?;
        writeln!(w, "tick,disagreement")?;
        for (t, d) in &self.disagreement {
            writeln!(w, "{t},{d}")?;
        }
        let mut w = std::fs::File::create(dir.join("assignment.csv"))?;
        writeln!(w, "tick,idle_agents,open_tasks,rounds,converged,potential")?;
        for a in &self.assignment_stats {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                a.tick, a.idle_agents, a.open_tasks, a.rounds, a.converged, a.potential
            )?;
        }
        let mut w = std::fs::File::create(dir.join("learn_log.csv"))?;
        writeln!(w, "tick,agent,pair,r,alpha")?;
        for (t, agent, pair, r, alpha) in &self.learn_log {
            writeln!(w, "{t},{agent},{pair},{r},{alpha}")?;
        }
        let summary = serde_json::json!({
            "policy": self.policy.name(),
            "seed": self.seed,
            "ticks_run": self.ticks_run,
            "ended_early": self.ended_early,
            "total_revenue": self.total_revenue(),
            "trips_served": self.trip_returns.len(),
            "final_disagreement": self.final_disagreement(),
            "max_q_input": self.max_q_input,
            "max_omega_input": self.max_omega_input,
            "max_sigma2": self.max_sigma2,
            "tracking_identity_residual": self.tracking_identity_residual,
            "rejected_rows": self.ingest.as_ref().map(|i| i.rejected),
        });
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Simulation internals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct LiveTask {
    task: Task,
    duration: f64,
    spawn_tick: u64,
}

#[derive(Debug, Clone)]
struct Plan {
    /// (task, nominal duration) in completion order.
    tasks: Vec<(Task, f64)>,
    /// Waypoints from the assignment position onward.
    route: Vec<Point2>,
    cumulative: Vec<f64>,
    approach_ticks: f64,
    invehicle_ticks: f64,
    start_tick: u64,
    /// Final destination cell committed to (successor action for learning).
    committed_dest: usize,
}

impl Plan {
    fn completion(&self) -> f64 {
        self.start_tick as f64 + self.approach_ticks + self.invehicle_ticks
    }

    fn position_at(&self, now: f64, speed: f64) -> Point2 {
        let elapsed = (now - self.start_tick as f64).max(0.0);
        let total_len = *self.cumulative.last().unwrap();
        let approach_len = self.cumulative[1];
        let s = if elapsed <= self.approach_ticks {
            (speed * elapsed).min(approach_len)
        } else if self.invehicle_ticks <= 0.0 {
            total_len
        } else {
            let frac = ((elapsed - self.approach_ticks) / self.invehicle_ticks).min(1.0);
            approach_len + frac * (total_len - approach_len)
        };
        self.point_at(s)
    }

    fn point_at(&self, s: f64) -> Point2 {
        for leg in 0..self.route.len() - 1 {
            let (a, b) = (self.cumulative[leg], self.cumulative[leg + 1]);
            if s <= b {
                let len = b - a;
                if len <= 0.0 {
                    return self.route[leg + 1];
                }
                let f = (s - a) / len;
                let (p, q) = (self.route[leg], self.route[leg + 1]);
                return Point2::new(p.x + f * (q.x - p.x), p.y + f * (q.y - p.y));
            }
        }
        *self.route.last().unwrap()
    }
}

#[derive(Debug, Clone)]
struct PendingEvent {
    pickup_cell: CellId,
    dropoff_cell: CellId,
    reward: f64,
}

#[derive(Debug, Clone)]
struct SimAgent {
    pos: Point2,
    plan: Option<Plan>,
    pending: VecDeque<PendingEvent>,
}

enum Stream {
    Synth(SynthDemand),
    File {
        windows: Vec<Vec<TripRecord>>,
        last: u64,
    },
}

impl Stream {
    fn window(&mut self, t: u64) -> Vec<TripRecord> {
        match self {
            Stream::Synth(s) => s.next_window(),
            Stream::File { windows, .. } => windows.get(t as usize).cloned().unwrap_or_default(),
        }
    }

    fn exhausted(&self, t: u64) -> bool {
        match self {
            Stream::Synth(_) => false,
            Stream::File { last, .. } => t > *last,
        }
    }
}

struct DemandSetup {
    model: DemandModel,
    geometry: GridGeometry,
    stream: Stream,
    ingest: Option<IngestReport>,
}

fn setup_demand(cfg: &SimConfig) -> Result<DemandSetup> {
    match &cfg.demand {
        DemandSource::Synthetic(spec) => {
            let synth = SynthDemand::new(spec, cfg.seed)?;
            let model = synth.model();
            model.validate()?;
            Ok(DemandSetup {
                model,
                geometry: spec.geometry.clone(),
                stream: Stream::Synth(synth),
                ingest: None,
            })
        }
        DemandSource::File {
            path,
            n_q,
            geometry,
            windows,
        } => {
            let file = std::fs::File::open(path)
                .map_err(|e| Error::Config(format!("cannot open trip file {path}: {e}")))?;
            let report =
                crate::demand::ingest_trips(std::io::BufReader::new(file), *n_q, Some(geometry))?;
            let last = report
                .records
                .iter()
                .map(|t| t.start_time)
                .max()
                .unwrap_or(0);
            let total_windows = windows.unwrap_or(last + 1);
            let idle = idle_observations(&report.records, *n_q, total_windows);
            let model = estimate_demand(&report.records, *n_q, &idle, total_windows)?;
            let mut grouped: Vec<Vec<TripRecord>> = vec![Vec::new(); (last + 1) as usize];
            for t in &report.records {
                grouped[t.start_time as usize].push(t.clone());
            }
            Ok(DemandSetup {
                model,
                geometry: geometry.clone(),
                stream: Stream::File {
                    windows: grouped,
                    last,
                },
                ingest: Some(report),
            })
        }
    }
}

fn random_point_in_cell(rng: &mut ChaCha8Rng, geometry: &GridGeometry, cell: CellId) -> Point2 {
    let c = geometry.centroid(cell);
    let half = geometry.cell_km / 2.0;
    Point2::new(
        c.x + rng.gen_range(-half..half) * 0.98,
        c.y + rng.gen_range(-half..half) * 0.98,
    )
}

enum Learner {
    None,
    Central(CentralTickLearner),
    Fleet {
        fleet: DistributedFleet,
        shadow: CentralTickLearner,
    },
}

/// Run one simulation to completion.
pub fn run(cfg: &SimConfig) -> Result<RunMetrics> {
    cfg.validate()?;
    let DemandSetup {
        model,
        geometry,
        mut stream,
        ingest,
    } = setup_demand(cfg)?;

    let needs_q = cfg.policy.needs_q();
    let warm: QTable = if needs_q {
        let mdp = build_mdp(&model, cfg.gamma)?;
        let (q, _) = solve_mpi(&mdp, cfg.mpi_eval_sweeps, cfg.mpi_tol)?;
        q
    } else {
        QTable::zeros(Arc::new(crate::qtable::QIndexMap::dense(model.n_q)))
    };

    let mut learner = match cfg.policy {
        Policy::DistributedSarsa if cfg.n_agents > 0 => Learner::Fleet {
            fleet: DistributedFleet::new(cfg.n_agents, &warm, cfg.gamma, cfg.zeta)?,
            shadow: CentralTickLearner::new(&warm, cfg.gamma, cfg.zeta)?,
        },
        Policy::CentralizedSarsa => {
            Learner::Central(CentralTickLearner::new(&warm, cfg.gamma, cfg.zeta)?)
        }
        _ => Learner::None,
    };

    let mut place_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9));
    let mut spawn_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7f4a_7c15));
    let mut game_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x2545_f491));

    let mut agents: Vec<SimAgent> = (0..cfg.n_agents)
        .map(|_| SimAgent {
            pos: Point2::new(
                place_rng.gen_range(0.0..geometry.width_km()),
                place_rng.gen_range(0.0..geometry.height_km()),
            ),
            plan: None,
            pending: VecDeque::new(),
        })
        .collect();

    let mut live: Vec<LiveTask> = Vec::new();
    let mut next_task_id: u64 = 0;
    let mut cumulative = 0.0f64;

    let mut metrics = RunMetrics {
        policy: cfg.policy,
        seed: cfg.seed,
        ticks_run: 0,
        ended_early: false,
        revenue: Vec::with_capacity(cfg.horizon as usize),
        trip_returns: Vec::new(),
        q_snapshots: Vec::new(),
        disagreement: Vec::new(),
        assignment_stats: Vec::new(),
        learn_log: Vec::new(),
        max_q_input: 0.0,
        max_omega_input: 0.0,
        max_sigma2: None,
        ingest,
        tracking_identity_residual: None,
    };

    for t in 0..cfg.horizon {
        if stream.exhausted(t) {
            metrics.ended_early = true;
            break;
        }
        // expire stale requests
        live.retain(|lt| lt.spawn_tick + cfg.expire_ticks > t);
        // spawn this window's requests
        for trip in stream.window(t) {
            let pickup = random_point_in_cell(&mut spawn_rng, &geometry, trip.pickup);
            let dropoff = random_point_in_cell(&mut spawn_rng, &geometry, trip.dropoff);
            let task = Task {
                id: next_task_id,
                pickup,
                pickup_cell: trip.pickup,
                dropoff,
                dropoff_cell: trip.dropoff,
                fare: trip.fare,
            };
            next_task_id += 1;
            live.push(LiveTask {
                task,
                duration: trip.duration,
                spawn_tick: t,
            });
        }
        // complete finished trips
        for (idx, agent) in agents.iter_mut().enumerate() {
            let done = agent
                .plan
                .as_ref()
                .is_some_and(|p| p.completion() <= t as f64);
            if !done {
                continue;
            }
            let plan = agent.plan.take().unwrap();
            agent.pos = *plan.route.last().unwrap();
            for (task, duration) in &plan.tasks {
                cumulative += task.fare;
                let m = model.m.get(task.pickup_cell.0, task.dropoff_cell.0);
                metrics.trip_returns.push(TripReturn {
                    tick: t,
                    agent: idx,
                    task_id: task.id,
                    fare: task.fare,
                    reward: m * task.fare / duration,
                });
                agent.pending.push_back(PendingEvent {
                    pickup_cell: task.pickup_cell,
                    dropoff_cell: task.dropoff_cell,
                    reward: m * task.fare / duration,
                });
            }
        }
        // assignment over idle agents
        let game_seed: u64 = game_rng.gen();
        let idle: Vec<usize> = (0..agents.len())
            .filter(|&i| agents[i].plan.is_none())
            .collect();
        if !idle.is_empty() && !live.is_empty() {
            let positions: Vec<Point2> = idle.iter().map(|&i| agents[i].pos).collect();
            let tasks: Vec<Task> = live.iter().map(|lt| lt.task.clone()).collect();
            let durations: Vec<f64> = live.iter().map(|lt| lt.duration).collect();
            let inst = GameInstance::new(&positions, &tasks, &cfg.game, &geometry)?;
            let q_refs: Vec<&[f64]>;
            let utility = match (&cfg.policy, &learner) {
                (Policy::DistributedSarsa, Learner::Fleet { fleet, .. }) => {
                    q_refs = idle.iter().map(|&i| fleet.agent_q(i)).collect();
                    Utility::QBased {
                        map: warm.map(),
                        qs: &q_refs,
                        demand: &model,
                    }
                }
                (Policy::CentralizedSarsa, Learner::Central(c)) => {
                    q_refs = idle.iter().map(|_| c.q.as_slice()).collect();
                    Utility::QBased {
                        map: warm.map(),
                        qs: &q_refs,
                        demand: &model,
                    }
                }
                (Policy::MdpStatic, _) => {
                    q_refs = idle.iter().map(|_| warm.values()).collect();
                    Utility::QBased {
                        map: warm.map(),
                        qs: &q_refs,
                        demand: &model,
                    }
                }
                (Policy::Greedy, _) => Utility::Greedy { demand: &model },
                (Policy::ShortestPath, _) => Utility::ShortestPath,
                _ => Utility::Greedy { demand: &model },
            };
            let out = run_assignment(&inst, &utility, game_seed, StopRule::for_agents(idle.len()));
            metrics.assignment_stats.push(AssignmentStat {
                tick: t,
                idle_agents: idle.len(),
                open_tasks: live.len(),
                rounds: out.rounds,
                converged: out.converged,
                potential: out.potential_trace.last().copied().unwrap_or(0.0),
            });
            // commit assignments
            let mut taken: Vec<usize> = Vec::new();
            for (k, &action) in out.profile.iter().enumerate() {
                let agent_idx = idle[k];
                let chosen: Vec<usize> = action.tasks().collect();
                if chosen.is_empty() {
                    continue;
                }
                let pos = agents[agent_idx].pos;
                let plan = build_plan(
                    pos,
                    &chosen
                        .iter()
                        .map(|&ti| (tasks[ti].clone(), durations[ti]))
                        .collect::<Vec<_>>(),
                    t,
                    cfg.speed,
                );
                agents[agent_idx].plan = Some(plan);
                taken.extend(chosen);
            }
            taken.sort_unstable();
            taken.dedup();
            for &ti in taken.iter().rev() {
                live.remove(ti);
            }
        }
        // learning update
        let events: Vec<Option<SarsaUpdateEvent>> = agents
            .iter_mut()
            .map(|agent| {
                agent.pending.pop_front().map(|ev| SarsaUpdateEvent {
                    state: ev.pickup_cell,
                    action: ev.dropoff_cell.0,
                    successor: ev.dropoff_cell,
                    successor_action: agent.plan.as_ref().map(|p| p.committed_dest),
                    reward: ev.reward,
                })
            })
            .collect();
        match &mut learner {
            Learner::Fleet { fleet, shadow } => {
                let positions: Vec<Point2> = agents.iter().map(|a| a.pos).collect();
                let graph = CommGraph::metropolis(&positions, cfg.game.r_comm)?;
                if cfg.track_consensus_bounds {
                    let s = graph.sigma2();
                    metrics.max_sigma2 = Some(metrics.max_sigma2.map_or(s, |cur: f64| cur.max(s)));
                }
                let telemetry = fleet.fleet_learn_tick(&graph, &events)?;
                for LearnTelemetry {
                    agent,
                    pair,
                    r,
                    alpha,
                } in telemetry
                {
                    metrics.learn_log.push((t, agent, pair, r, alpha));
                }
                let pooled: Vec<SarsaUpdateEvent> = events.iter().flatten().cloned().collect();
                shadow.tick(&pooled)?;
                metrics.disagreement.push((t, fleet.disagreement()));
                metrics.max_q_input = fleet.max_q_input;
                metrics.max_omega_input = fleet.max_omega_input;
            }
            Learner::Central(central) => {
                let pooled: Vec<SarsaUpdateEvent> = events.iter().flatten().cloned().collect();
                let telemetry = central.tick(&pooled)?;
                for LearnTelemetry {
                    agent,
                    pair,
                    r,
                    alpha,
                } in telemetry
                {
                    metrics.learn_log.push((t, agent, pair, r, alpha));
                }
            }
            Learner::None => {}
        }
        // snapshots and revenue trace
        if t % cfg.snapshot_cadence == 0 {
            for &(cell, dest) in &cfg.tracked_pairs {
                if let Ok(pair) = warm.map().pair(CellId(cell), dest) {
                    let (values, central) = match &learner {
                        Learner::Fleet { fleet, shadow } => (
                            (0..fleet.n_agents())
                                .map(|i| fleet.agent_q(i)[pair])
                                .collect(),
                            Some(shadow.q[pair]),
                        ),
                        Learner::Central(c) => (vec![c.q[pair]], None),
                        Learner::None => (vec![warm.values()[pair]], None),
                    };
                    metrics.q_snapshots.push(QSnapshot {
                        tick: t,
                        cell,
                        dest,
                        values,
                        central,
                    });
                }
            }
        }
        metrics.revenue.push(cumulative);
        metrics.ticks_run = t + 1;
        // move busy agents toward the next tick's positions
        let now = (t + 1) as f64;
        for agent in &mut agents {
            if let Some(plan) = &agent.plan {
                agent.pos = plan.position_at(now, cfg.speed);
            }
        }
    }

    if let Learner::Fleet { fleet, .. } = &learner {
        let mean = fleet.mean_q();
        let mean_input = fleet.mean_input();
        let residual = mean
            .iter()
            .zip(warm.values())
            .zip(&mean_input)
            .map(|((m, w), s)| (m - (w + s)).abs())
            .fold(0.0, f64::max);
        metrics.tracking_identity_residual = Some(residual);
    }
    Ok(metrics)
}

/// Route and timing for a committed action. Pooled pairs follow the
/// four-leg order used by the utility (nearest pickup first, then the
/// dropoff closer to the second pickup); the in-vehicle leg lasts the
/// longest nominal duration scaled by the relative detour.
fn build_plan(pos: Point2, tasks: &[(Task, f64)], start_tick: u64, speed: f64) -> Plan {
    assert!(!tasks.is_empty() && tasks.len() <= 2);
    let (route, ordered, invehicle) = if tasks.len() == 1 {
        let (task, dur) = &tasks[0];
        (
            vec![pos, task.pickup, task.dropoff],
            vec![(task.clone(), *dur)],
            *dur,
        )
    } else {
        let (ta, tb) = (&tasks[0], &tasks[1]);
        let (p1, p2) = if pos.dist(ta.0.pickup) <= pos.dist(tb.0.pickup) {
            (ta, tb)
        } else {
            (tb, ta)
        };
        let (d1, d2) = {
            let (la, lb) = (
                p2.0.pickup.dist(ta.0.dropoff),
                p2.0.pickup.dist(tb.0.dropoff),
            );
            if la <= lb {
                (ta, tb)
            } else {
                (tb, ta)
            }
        };
        let route = vec![pos, p1.0.pickup, p2.0.pickup, d1.0.dropoff, d2.0.dropoff];
        let path: f64 = route.windows(2).map(|w| w[0].dist(w[1])).sum();
        let direct = ta.0.direct_length().min(tb.0.direct_length());
        let beta = if direct > 0.0 {
            (path - pos.dist(p1.0.pickup)) / direct - 1.0
        } else {
            0.0
        };
        let invehicle = (1.0 + beta.max(0.0)) * ta.1.max(tb.1);
        (
            route,
            vec![(d1.0.clone(), d1.1), (d2.0.clone(), d2.1)],
            invehicle,
        )
    };
    let mut cumulative = vec![0.0];
    for w in route.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + w[0].dist(w[1]));
    }
    let approach_ticks = pos.dist(route[1]) / speed;
    let committed_dest = route
        .last()
        .map(|_| ordered.last().unwrap().0.dropoff_cell.0)
        .unwrap();
    Plan {
        tasks: ordered,
        route,
        cumulative,
        approach_ticks,
        invehicle_ticks: invehicle,
        start_tick,
        committed_dest,
    }
}

// ---------------------------------------------------------------------------
// Matched-seed comparisons
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: Policy,
    pub n_agents: usize,
    pub r_comm: f64,
    pub seeds: Vec<u64>,
    pub mean_revenue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub numerator: Policy,
    pub denominator: Policy,
    pub n_agents: usize,
    pub r_comm: f64,
    /// Mean over matched seeds of per-seed revenue ratios.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub ratios: Vec<RatioRow>,
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "policy,n_agents,r_comm,seeds,mean_revenue")?;
        for r in &self.rows {
            let seeds = r
                .seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(";");
            writeln!(
                out,
                "{},{},{},{},{}",
                r.policy.name(),
                r.n_agents,
                r.r_comm,
                seeds,
                r.mean_revenue
            )?;
        }
        writeln!(out, "numerator,denominator,n_agents,r_comm,ratio")?;
        for r in &self.ratios {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.numerator.name(),
                r.denominator.name(),
                r.n_agents,
                r.r_comm,
                r.ratio
            )?;
        }
        Ok(())
    }
}

/// Strip the sweep dimensions so the remainder can be compared.
fn sweep_invariant(cfg: &SimConfig) -> Result<serde_json::Value> {
    let mut clone = cfg.clone();
    clone.policy = Policy::Greedy;
    clone.seed = 0;
    clone.n_agents = 0;
    clone.game.r_comm = 0.0;
    Ok(serde_json::to_value(&clone)?)
}

/// Check that configs vary only in the sweep dimensions.
pub fn check_sweep_dims(cfgs: &[SimConfig]) -> Result<()> {
    if cfgs.is_empty() {
        return Err(Error::Config(
            "compare_runs needs at least one config".into(),
        ));
    }
    let base = sweep_invariant(&cfgs[0])?;
    for cfg in &cfgs[1..] {
        if sweep_invariant(cfg)? != base {
            return Err(Error::Shape(
                "configs differ outside the sweep dimensions (policy, seed, n_agents, r_comm)"
                    .into(),
            ));
        }
    }
    Ok(())
}

/// Run every config and tabulate mean revenues plus matched-seed revenue
/// ratios of each policy against the centralized baseline (or against the
/// first policy seen when no centralized run is present). Configs may vary
/// only in policy, seed, agent count, and communication radius.
pub fn compare_runs(cfgs: &[SimConfig]) -> Result<ComparisonTable> {
    check_sweep_dims(cfgs)?;
    let results: Vec<(SimConfig, RunMetrics)> = cfgs
        .iter()
        .map(|cfg| run(cfg).map(|m| (cfg.clone(), m)))
        .collect::<Result<Vec<_>>>()?;
    compare_metrics(&results)
}

/// Tabulate already-computed runs; see `compare_runs`.
pub fn compare_metrics(results: &[(SimConfig, RunMetrics)]) -> Result<ComparisonTable> {
    let cfgs: Vec<SimConfig> = results.iter().map(|(c, _)| c.clone()).collect();
    check_sweep_dims(&cfgs)?;

    // group by (policy, n_agents, r_comm)
    let mut rows: Vec<ComparisonRow> = Vec::new();
    for (cfg, m) in results {
        let key = (cfg.policy, cfg.n_agents, cfg.game.r_comm);
        match rows
            .iter_mut()
            .find(|r| (r.policy, r.n_agents, r.r_comm) == key)
        {
            Some(row) => {
                row.seeds.push(cfg.seed);
                row.mean_revenue += m.total_revenue();
            }
            None => rows.push(ComparisonRow {
                policy: cfg.policy,
                n_agents: cfg.n_agents,
                r_comm: cfg.game.r_comm,
                seeds: vec![cfg.seed],
                mean_revenue: m.total_revenue(),
            }),
        }
    }
    for row in &mut rows {
        row.mean_revenue /= row.seeds.len() as f64;
    }

    let denominator = results
        .iter()
        .map(|(c, _)| c.policy)
        .find(|p| *p == Policy::CentralizedSarsa)
        .unwrap_or(cfgs[0].policy);

    let mut ratios: Vec<RatioRow> = Vec::new();
    for (cfg, m) in results {
        // matched-seed denominator run at the same agent count
        let den = results.iter().find(|(c, _)| {
            c.policy == denominator && c.seed == cfg.seed && c.n_agents == cfg.n_agents
        });
        let Some((_, dm)) = den else { continue };
        if dm.total_revenue() <= 0.0 {
            continue;
        }
        let key = (cfg.policy, cfg.n_agents, cfg.game.r_comm);
        let ratio = m.total_revenue() / dm.total_revenue();
        match ratios
            .iter_mut()
            .find(|r| (r.numerator, r.n_agents, r.r_comm) == key && r.denominator == denominator)
        {
            Some(row) => row.ratio += ratio,
            None => ratios.push(RatioRow {
                numerator: cfg.policy,
                denominator,
                n_agents: cfg.n_agents,
                r_comm: cfg.game.r_comm,
                ratio,
            }),
        }
    }
    // each ratio row accumulated one term per matched seed
    for row in &mut ratios {
        let seeds = rows
            .iter()
            .find(|r| (r.policy, r.n_agents, r.r_comm) == (row.numerator, row.n_agents, row.r_comm))
            .map_or(1, |r| r.seeds.len());
        row.ratio /= seeds as f64;
    }
    Ok(ComparisonTable { rows, ratios })
}
