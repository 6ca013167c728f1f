//! Acceptance suite: one test per release criterion, each printing a
//! `criterion N: PASS` line when its assertions hold. Run with
//! `cargo test -p fleetrl-cli --test acceptance -- --nocapture` to see the
//! lines; a failed criterion fails its test.

use std::process::Command;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fleetrl::consensus::bounds_from_sigma;
use fleetrl::demand::{DemandModel, DriftSpec, MatrixSpec, ScenarioSpec};
use fleetrl::game::{
    potential_identity_check, run_assignment, system_value, ActionProfile, AgentAction, GameConfig,
    GameInstance, StopRule, Task, Utility,
};
use fleetrl::grid::{CellId, GridGeometry, Point2};
use fleetrl::matrix::Mat;
use fleetrl::mdp::{build_mdp, solve_mpi};
use fleetrl::qtable::{QIndexMap, QTable};
use fleetrl::sarsa::{sarsa_step, AdaptiveRateState, SarsaUpdateEvent};
use fleetrl::sim::{run, DemandSource, Policy, SimConfig};

fn pass(n: usize, what: &str) {
    println!("criterion {n}: PASS — {what}");
}

// ---------------------------------------------------------------------------
// 1. Drift-bound reference values through the CLI
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_drift_bound_reference_values() {
    let out = Command::new(env!("CARGO_BIN_EXE_fleetrl"))
        .args([
            "verify-bounds",
            "--epsilon",
            "0.2",
            "--delta",
            "25.4",
            "--gamma",
            "0.8",
            "--r-inf",
            "128.6",
        ])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let get = |name: &str| -> f64 {
        text.lines()
            .find(|l| l.starts_with(name))
            .and_then(|l| l.split('=').nth(1))
            .expect("value printed")
            .trim()
            .parse()
            .expect("numeric value")
    };
    let d = get("d");
    let kappa = get("kappa");
    assert!((d - 641.4).abs() / 641.4 < 1e-3, "d = {d}");
    assert!((kappa - 12828.0).abs() / 12828.0 < 1e-3, "kappa = {kappa}");
    pass(
        1,
        &format!("verify-bounds prints d = {d:.1}, kappa = {kappa:.0} (within 0.1%)"),
    );
}

// ---------------------------------------------------------------------------
// 2. Planner vs an independent value-iteration oracle
// ---------------------------------------------------------------------------

fn random_demand(rng: &mut ChaCha8Rng, n_q: usize) -> DemandModel {
    let mut l = vec![vec![0.0; n_q]; n_q];
    let mut d = vec![vec![0.0; n_q]; n_q];
    for i in 0..n_q {
        let raw: Vec<f64> = (0..n_q).map(|_| rng.gen::<f64>()).collect();
        let off_total: f64 = raw
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| v)
            .sum();
        let target: f64 = rng.gen_range(0.0..0.9);
        for j in 0..n_q {
            if j != i {
                l[i][j] = raw[j] / off_total * target;
            }
            d[i][j] = rng.gen_range(0.0..10.0);
        }
        l[i][i] = rng.gen_range(0.0..0.95);
    }
    DemandModel {
        n_q,
        l: Mat::from_rows(l).unwrap(),
        d: Mat::from_rows(d).unwrap(),
        m: Mat::filled(n_q, n_q, 1.0),
    }
}

/// Plain value iteration on the focused problem at `l`, built directly from
/// the demand matrices — independent of the library's planner code path.
fn vi_oracle(dm: &DemandModel, gamma: f64, l: usize, iters: usize) -> Vec<f64> {
    let n = dm.n_q;
    let stay: Vec<f64> = (0..n)
        .map(|i| {
            1.0 - (0..n)
                .filter(|&k| k != i)
                .map(|k| dm.l.get(i, k))
                .sum::<f64>()
        })
        .collect();
    let reward = |i: usize, j: usize| -> f64 {
        if i == j {
            dm.l.get(i, i) * dm.d.get(i, i)
                / (1.0 + dm.l.get(i, i) - dm.l.row(i).iter().sum::<f64>())
        } else {
            dm.d.get(i, j)
        }
    };
    let mut w = vec![0.0; n];
    for _ in 0..iters {
        let mut next = vec![0.0; n];
        for i in 0..n {
            if i == l {
                next[i] = (0..n)
                    .map(|j| reward(l, j) + gamma * w[j])
                    .fold(f64::NEG_INFINITY, f64::max);
            } else {
                let mut acc = stay[i] * (reward(i, i) + gamma * w[i]);
                for k in 0..n {
                    if k != i {
                        acc += dm.l.get(i, k) * (reward(i, k) + gamma * w[k]);
                    }
                }
                next[i] = acc;
            }
        }
        w = next;
    }
    (0..n).map(|j| reward(l, j) + gamma * w[j]).collect()
}

#[test]
fn criterion_02_planner_matches_value_iteration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_gap = 0.0f64;
    let mut worst_row_err = 0.0f64;
    for _ in 0..50 {
        let n_q = rng.gen_range(2..=4);
        let dm = random_demand(&mut rng, n_q);
        let mdp = build_mdp(&dm, 0.8).unwrap();
        worst_row_err = worst_row_err.max(mdp.max_row_sum_error());
        assert!(
            mdp.max_row_sum_error() <= 1e-12,
            "row sums off by {}",
            mdp.max_row_sum_error()
        );
        let (q, _) = solve_mpi(&mdp, 10, 1e-10).unwrap();
        for l in 0..n_q {
            let oracle = vi_oracle(&dm, 0.8, l, 500);
            for j in 0..n_q {
                let gap = (q.get(CellId(l), j).unwrap() - oracle[j]).abs();
                worst_gap = worst_gap.max(gap);
                assert!(gap <= 1e-6, "Q({l},{j}) off oracle by {gap}");
            }
        }
    }
    pass(
        2,
        &format!(
            "50 random models: max |Q - oracle| = {worst_gap:.2e} (<= 1e-6), max row-sum error = {worst_row_err:.2e} (<= 1e-12)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Potential-game identity fuzz
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_potential_identity_fuzz() {
    let geometry = GridGeometry::new(2, 2, 2.0).unwrap();
    let demand = DemandModel {
        n_q: 4,
        l: Mat::filled(4, 4, 0.05),
        d: Mat::filled(4, 4, 3.0),
        m: Mat::filled(4, 4, 1.0),
    };
    let map = Arc::new(QIndexMap::dense(4));
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let total = 1000;
    for case in 0..total {
        let pooling = case % 2 == 0;
        let cfg = GameConfig {
            r_c: rng.gen_range(1.0..3.0),
            r_comm: 6.0,
            travel_cost: rng.gen_range(0.0..5.0),
            pooling_penalty: rng.gen_range(0.1..2.0),
            tau: 0.5,
            pooling,
        };
        let n_tasks = rng.gen_range(1..=6);
        let tasks: Vec<Task> = (0..n_tasks)
            .map(|id| {
                Task::new(
                    id as u64,
                    Point2::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)),
                    Point2::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)),
                    rng.gen_range(1.0..10.0),
                    &geometry,
                )
                .unwrap()
            })
            .collect();
        let n_agents = rng.gen_range(1..=5);
        let positions: Vec<Point2> = (0..n_agents)
            .map(|_| Point2::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)))
            .collect();
        let inst = GameInstance::new(&positions, &tasks, &cfg, &geometry).unwrap();
        let values: Vec<f64> = (0..map.len()).map(|_| rng.gen_range(0.0..8.0)).collect();
        let q = QTable::from_values(Arc::clone(&map), values).unwrap();
        let qs: Vec<&[f64]> = (0..n_agents).map(|_| q.values()).collect();
        let utility = Utility::QBased {
            map: &map,
            qs: &qs,
            demand: &demand,
        };
        let profile: ActionProfile = (0..n_agents)
            .map(|i| {
                let acts = &inst.available[i];
                acts[rng.gen_range(0..acts.len())]
            })
            .collect();
        let agent = rng.gen_range(0..n_agents);
        let acts = &inst.available[agent];
        let a = acts[rng.gen_range(0..acts.len())];
        let b = acts[rng.gen_range(0..acts.len())];
        assert!(
            potential_identity_check(&inst, &utility, &profile, agent, a, b),
            "identity failed on case {case} (pooling {pooling})"
        );
    }
    pass(
        3,
        &format!("potential identity held on {total}/{total} fuzzed instances"),
    );
}

// ---------------------------------------------------------------------------
// 4. Low-temperature assignment optimality vs exhaustive enumeration
// ---------------------------------------------------------------------------

fn brute_force_max_phi(inst: &GameInstance, utility: &Utility) -> f64 {
    fn rec(
        inst: &GameInstance,
        utility: &Utility,
        agent: usize,
        profile: &mut ActionProfile,
        used: &mut Vec<bool>,
        best: &mut f64,
    ) {
        if agent == inst.n_agents() {
            let phi = system_value(inst, utility, profile);
            if phi > *best {
                *best = phi;
            }
            return;
        }
        for &action in &inst.available[agent] {
            if action.tasks().any(|t| used[t]) {
                continue;
            }
            for t in action.tasks() {
                used[t] = true;
            }
            profile[agent] = action;
            rec(inst, utility, agent + 1, profile, used, best);
            for t in action.tasks() {
                used[t] = false;
            }
            profile[agent] = AgentAction::Null;
        }
    }
    let mut profile = vec![AgentAction::Null; inst.n_agents()];
    let mut used = vec![false; inst.tasks.len()];
    let mut best = f64::NEG_INFINITY;
    rec(inst, utility, 0, &mut profile, &mut used, &mut best);
    best
}

#[test]
fn criterion_04_low_temperature_assignment_optimality() {
    let geometry = GridGeometry::new(2, 2, 2.0).unwrap();
    let cfg = GameConfig {
        r_c: 3.0,
        r_comm: 6.0,
        travel_cost: 0.15,
        pooling_penalty: 1.0,
        tau: 0.05,
        pooling: false,
    };
    let demand = DemandModel {
        n_q: 4,
        l: Mat::filled(4, 4, 0.05),
        d: Mat::filled(4, 4, 0.25),
        m: Mat::filled(4, 4, 1.0),
    };
    let map = Arc::new(QIndexMap::dense(4));
    let total = 100;
    let mut hits = 0;
    for seed in 0..total {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let tasks: Vec<Task> = (0..4)
            .map(|id| {
                Task::new(
                    id,
                    Point2::new(rng.gen_range(0.5..3.5), rng.gen_range(0.5..3.5)),
                    Point2::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)),
                    rng.gen_range(0.2..0.8),
                    &geometry,
                )
                .unwrap()
            })
            .collect();
        let positions: Vec<Point2> = (0..3)
            .map(|_| Point2::new(rng.gen_range(0.5..3.5), rng.gen_range(0.5..3.5)))
            .collect();
        let inst = GameInstance::new(&positions, &tasks, &cfg, &geometry).unwrap();
        let values: Vec<f64> = (0..map.len()).map(|_| rng.gen_range(0.0..0.5)).collect();
        let q = QTable::from_values(Arc::clone(&map), values).unwrap();
        let qs: Vec<&[f64]> = (0..3).map(|_| q.values()).collect();
        let utility = Utility::QBased {
            map: &map,
            qs: &qs,
            demand: &demand,
        };
        let target = brute_force_max_phi(&inst, &utility);
        let out = run_assignment(
            &inst,
            &utility,
            seed,
            StopRule {
                stable_rounds: 50_000,
                max_rounds: 40_000,
            },
        );
        let phi = system_value(&inst, &utility, &out.profile);
        if (phi - target).abs() < 1e-9 {
            hits += 1;
        }
    }
    assert!(hits >= 90, "optimum reached in only {hits}/{total} runs");
    pass(
        4,
        &format!("learning reached the enumerated optimum in {hits}/{total} runs (>= 90)"),
    );
}

// ---------------------------------------------------------------------------
// Shared simulation scenarios
// ---------------------------------------------------------------------------

/// Strip city: busy corridor cells 0..3, slow edge cells 4..5. Edge-bound
/// trips pay like good corridor trips but their destinations rarely produce
/// follow-up work.
fn corridor_scenario(drift: Option<DriftSpec>) -> ScenarioSpec {
    let n = 6usize;
    let mut rate = vec![vec![0.0; n]; n];
    let mut fare = vec![vec![0.0; n]; n];
    let pairs: &[(usize, usize, f64, f64)] = &[
        (0, 1, 0.30, 5.0),
        (0, 2, 0.15, 9.0),
        (0, 4, 0.12, 7.0),
        (1, 0, 0.30, 4.0),
        (1, 2, 0.20, 8.0),
        (1, 5, 0.10, 7.0),
        (2, 1, 0.30, 6.0),
        (2, 3, 0.15, 9.0),
        (2, 4, 0.10, 7.0),
        (3, 2, 0.25, 5.0),
        (3, 0, 0.10, 8.0),
        (3, 5, 0.08, 7.0),
        (4, 2, 0.10, 6.0),
        (4, 3, 0.04, 6.0),
        (5, 3, 0.10, 6.0),
        (5, 1, 0.03, 7.0),
    ];
    for &(i, j, r, f) in pairs {
        rate[i][j] = r;
        fare[i][j] = f;
    }
    ScenarioSpec {
        n_q: n,
        geometry: GridGeometry::new(1, 6, 3.0).unwrap(),
        rate: MatrixSpec::Matrix(rate),
        fare: MatrixSpec::Matrix(fare),
        duration: MatrixSpec::Uniform(8.0),
        fare_jitter: 0.2,
        motion: None,
        drift,
    }
}

fn corridor_cfg(policy: Policy, seed: u64, r_comm: f64, drift: Option<DriftSpec>) -> SimConfig {
    SimConfig {
        n_agents: 10,
        horizon: 2500,
        seed,
        policy,
        demand: DemandSource::Synthetic(corridor_scenario(drift)),
        game: GameConfig {
            r_c: 1.2,
            r_comm,
            travel_cost: 0.5,
            pooling_penalty: 1.0,
            tau: 0.5,
            pooling: false,
        },
        gamma: 0.8,
        zeta: 0.2,
        snapshot_cadence: 100,
        speed: 0.5,
        expire_ticks: 5,
        tracked_pairs: vec![],
        mpi_eval_sweeps: 10,
        mpi_tol: 1e-8,
        track_consensus_bounds: false,
    }
}

// ---------------------------------------------------------------------------
// 5. One-agent distributed run equals the centralized run exactly
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_single_agent_reduction_exact() {
    let make = |policy: Policy| {
        let mut cfg = corridor_cfg(policy, 77, 6.0, None);
        cfg.n_agents = 1;
        cfg.horizon = 1500;
        cfg.tracked_pairs = vec![(0, 1), (2, 3), (1, 2)];
        cfg.snapshot_cadence = 1;
        cfg
    };
    let dist = run(&make(Policy::DistributedSarsa)).unwrap();
    let cent = run(&make(Policy::CentralizedSarsa)).unwrap();
    assert_eq!(dist.revenue, cent.revenue, "revenue trajectories differ");
    assert_eq!(dist.trip_returns, cent.trip_returns, "trip logs differ");
    assert_eq!(dist.q_snapshots.len(), cent.q_snapshots.len());
    for (a, b) in dist.q_snapshots.iter().zip(&cent.q_snapshots) {
        assert_eq!(a.tick, b.tick);
        assert_eq!(
            a.values[0], b.values[0],
            "Q trajectories diverge at tick {} pair ({}, {})",
            a.tick, a.cell, a.dest
        );
    }
    pass(
        5,
        &format!(
            "one-agent distributed and centralized runs match exactly over {} snapshots",
            dist.q_snapshots.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. Long-run consensus tracking within the analytic bound
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_consensus_tracking_within_bound() {
    let spec = ScenarioSpec {
        n_q: 4,
        geometry: GridGeometry::new(2, 2, 2.0).unwrap(),
        rate: MatrixSpec::Matrix(vec![
            vec![0.05, 0.25, 0.10, 0.05],
            vec![0.20, 0.05, 0.10, 0.05],
            vec![0.10, 0.10, 0.02, 0.05],
            vec![0.05, 0.10, 0.05, 0.02],
        ]),
        fare: MatrixSpec::Uniform(6.0),
        duration: MatrixSpec::Uniform(3.0),
        fare_jitter: 0.3,
        motion: None,
        drift: None,
    };
    let cfg = SimConfig {
        n_agents: 10,
        horizon: 50_000,
        seed: 42,
        policy: Policy::DistributedSarsa,
        demand: DemandSource::Synthetic(spec),
        game: GameConfig {
            r_c: 2.0,
            r_comm: 5.0,
            travel_cost: 0.5,
            pooling_penalty: 1.0,
            tau: 0.5,
            pooling: false,
        },
        gamma: 0.8,
        zeta: 0.2,
        snapshot_cadence: 50,
        speed: 0.5,
        expire_ticks: 5,
        tracked_pairs: vec![(0, 1)],
        mpi_eval_sweeps: 10,
        mpi_tol: 1e-8,
        track_consensus_bounds: true,
    };
    let m = run(&cfg).unwrap();
    let max_sigma2 = m.max_sigma2.expect("sigma tracked");
    assert!(
        max_sigma2 < 0.999,
        "proximity graph disconnected: sigma2 = {max_sigma2}"
    );
    let bounds =
        bounds_from_sigma(max_sigma2, cfg.n_agents, m.max_q_input, m.max_omega_input).unwrap();
    let last = m.q_snapshots.last().expect("snapshots recorded");
    let central = last.central.expect("shadow central tracked");
    let max_diff = last
        .values
        .iter()
        .map(|v| (v - central).abs())
        .fold(0.0, f64::max);
    assert!(
        max_diff <= bounds.delta_q,
        "terminal disagreement {max_diff} exceeds delta_q {}",
        bounds.delta_q
    );
    pass(
        6,
        &format!(
            "after {} ticks, per-agent tracked-pair gap {max_diff:.3e} <= delta_q {:.3e} (sigma2 {max_sigma2:.3})",
            cfg.horizon, bounds.delta_q
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. Revenue-ratio trends over the communication radius
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_revenue_ratio_trends() {
    let drift = Some(DriftSpec::Sinusoid {
        period: 800.0,
        rate_amp: 0.25,
        fare_amp: 0.25,
    });
    let radii = [2.4, 4.5, 20.0];
    let seeds: Vec<u64> = (300..305).collect();
    let mut central = Vec::new();
    for &seed in &seeds {
        central.push(
            run(&corridor_cfg(
                Policy::CentralizedSarsa,
                seed,
                20.0,
                drift.clone(),
            ))
            .unwrap()
            .total_revenue(),
        );
    }
    let mut means = Vec::new();
    for &r_comm in &radii {
        let mut acc = 0.0;
        for (k, &seed) in seeds.iter().enumerate() {
            let d = run(&corridor_cfg(
                Policy::DistributedSarsa,
                seed,
                r_comm,
                drift.clone(),
            ))
            .unwrap()
            .total_revenue();
            acc += d / central[k];
        }
        means.push(acc / seeds.len() as f64);
    }
    // (a) complete graph recovers the centralized revenue
    let complete = *means.last().unwrap();
    assert!(
        complete >= 0.95,
        "complete-graph ratio {complete:.3} < 0.95"
    );
    // (b) nondecreasing in the communication radius, 0.02 noise band
    for w in means.windows(2) {
        assert!(
            w[1] >= w[0] - 0.02,
            "ratio decreased beyond the noise band: {means:?}"
        );
    }
    pass(
        7,
        &format!(
            "ratios over r_comm {radii:?}: {:?} — complete {complete:.3} >= 0.95, nondecreasing within 0.02",
            means.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Economic ordering under a demand step
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_economic_ordering_under_drift() {
    let drift = Some(DriftSpec::Step {
        at_tick: 2000,
        rate_scale: 0.8,
        fare_scale: 1.3,
    });
    let seeds: Vec<u64> = (100..105).collect();
    let mut ordered_seeds = 0;
    let mut lines = Vec::new();
    for &seed in &seeds {
        let mut totals = Vec::new();
        for policy in [
            Policy::DistributedSarsa,
            Policy::Greedy,
            Policy::ShortestPath,
        ] {
            let mut cfg = corridor_cfg(policy, seed, 5.5, drift.clone());
            cfg.n_agents = 20;
            cfg.horizon = 4000;
            cfg.game.r_c = 1.8;
            let m = run(&cfg).unwrap();
            let rev = m.revenue;
            let q3 = 3 * rev.len() / 4;
            totals.push((rev[q3], *rev.last().unwrap()));
        }
        // cumulative ordering established by the final quarter: holds both
        // at its start and at the horizon
        let ok = totals[0].0 > totals[1].0
            && totals[1].0 > totals[2].0
            && totals[0].1 > totals[1].1
            && totals[1].1 > totals[2].1;
        if ok {
            ordered_seeds += 1;
        }
        lines.push(format!(
            "seed {seed}: dist {:.0} > greedy {:.0} > shortest {:.0} = {ok}",
            totals[0].1, totals[1].1, totals[2].1
        ));
    }
    for l in &lines {
        println!("  {l}");
    }
    assert!(
        ordered_seeds >= 4,
        "ordering held in only {ordered_seeds}/5 seeds"
    );
    pass(
        8,
        &format!("distributed > greedy > shortest-path in {ordered_seeds}/5 seeds (>= 4)"),
    );
}

// ---------------------------------------------------------------------------
// 9. Adaptive-rate responsiveness to a reward step
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_adaptive_rate_responsiveness() {
    let map = Arc::new(QIndexMap::dense(2));
    let mut q = QTable::zeros(Arc::clone(&map));
    let zeta = 0.2;
    let mut rates = AdaptiveRateState::new(&map, zeta).unwrap();
    let event = |reward: f64| SarsaUpdateEvent {
        state: CellId(0),
        action: 1,
        successor: CellId(1),
        successor_action: Some(0),
        reward,
    };
    let pair = map.pair(CellId(0), 1).unwrap();
    let mut all_alphas_clamped = true;
    // converge on a flat reward stream
    for _ in 0..2_000 {
        q.set(CellId(1), 0, 0.0).unwrap();
        let alpha = sarsa_step(&mut q, &mut rates, &event(1.0), 0.8).unwrap();
        all_alphas_clamped &= (0.0..=1.0).contains(&alpha);
    }
    let alpha_before = rates.alpha(pair);
    // step the reward mean and watch the rate inside ceil(1/zeta) updates
    let budget = (1.0 / zeta).ceil() as usize;
    let mut rose_at = None;
    for k in 0..budget {
        q.set(CellId(1), 0, 0.0).unwrap();
        let alpha = sarsa_step(&mut q, &mut rates, &event(6.0), 0.8).unwrap();
        all_alphas_clamped &= (0.0..=1.0).contains(&alpha);
        if alpha > alpha_before && rose_at.is_none() {
            rose_at = Some(k + 1);
        }
    }
    let rose_at = rose_at.expect("alpha never rose within ceil(1/zeta) updates");
    assert!(all_alphas_clamped, "alpha left [0, 1]");
    pass(
        9,
        &format!(
            "alpha rose strictly above {alpha_before:.3e} after {rose_at} post-step update(s) (budget {budget}); all alphas within [0, 1]"
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. Average-tracking identity over a long distributed run
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_average_tracking_identity() {
    let mut cfg = corridor_cfg(Policy::DistributedSarsa, 5, 6.0, None);
    cfg.n_agents = 10;
    cfg.horizon = 10_000;
    let m = run(&cfg).unwrap();
    let residual = m.tracking_identity_residual.expect("distributed run");
    assert!(
        residual <= 1e-8,
        "identity residual {residual} exceeds 1e-8"
    );
    pass(
        10,
        &format!(
            "mean estimate equals warm start plus mean inputs within {residual:.2e} (<= 1e-8) over {} ticks",
            cfg.horizon
        ),
    );
}
