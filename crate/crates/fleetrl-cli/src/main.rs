//! Command-line front end: estimate demand, solve the planner, simulate
//! fleets, sweep configurations, and verify analytic bounds.
//!
//! Exit codes: 0 on success, 1 on internal errors, 2 on user/input errors.

use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use fleetrl::consensus::{error_bounds, import_schedule};
use fleetrl::demand::{estimate_demand, idle_observations, ingest_trips, DemandModel};
use fleetrl::grid::GridGeometry;
use fleetrl::mdp::{build_mdp, kappa_bound, solve_mpi};
use fleetrl::qtable::{QTableFile, RankedPolicyFile};
use fleetrl::sim::{compare_metrics, config_hash, run, RunMetrics, SimConfig};

const EXIT_INTERNAL: i32 = 1;
const EXIT_USER: i32 = 2;

#[derive(Parser)]
#[command(
    name = "fleetrl",
    version,
    about = "Fleet routing: demand estimation, planning, learning and simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Print progress details.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a demand model from a delimited trip file.
    Estimate(EstimateArgs),
    /// Solve the planning model from a demand-model file.
    Solve(SolveArgs),
    /// Run one simulation described by a config file.
    Simulate(SimulateArgs),
    /// Run a matched-seed sweep and tabulate revenue ratios.
    Sweep(SweepArgs),
    /// Evaluate the drift bound and/or tracking bounds.
    VerifyBounds(VerifyBoundsArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Trip file (header names the columns).
    #[arg(long)]
    trips: PathBuf,
    /// Estimation config: n_q, geometry, optional windows.
    #[arg(long)]
    config: PathBuf,
    /// Output path of the demand-model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Demand-model file produced by `estimate` (or written by hand).
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = fleetrl::mdp::DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = fleetrl::mdp::DEFAULT_EVAL_SWEEPS)]
    eval_sweeps: usize,
    #[arg(long, default_value_t = fleetrl::mdp::DEFAULT_TOL)]
    tol: f64,
    /// Output directory for qtable.json and policy.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory; the run lands in `run-<hash>-s<seed>/` beneath it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep config file (base sim config plus sweep lists).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for per-run exports and comparison.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyBoundsArgs {
    /// Drift of the transition model.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Drift of the reward model.
    #[arg(long)]
    delta: Option<f64>,
    /// Discount factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Sup-norm of the reward model.
    #[arg(long)]
    r_inf: Option<f64>,
    /// Tracking-bound config: schedule csv, r_max, dr_max.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Errors from bad input get exit code 2, everything else exit code 1.
fn exit_code_for(err: &anyhow::Error) -> i32 {
    if let Some(lib) = err.downcast_ref::<fleetrl::Error>() {
        return match lib {
            fleetrl::Error::Config(_)
            | fleetrl::Error::Parse { .. }
            | fleetrl::Error::Model(_)
            | fleetrl::Error::Shape(_)
            | fleetrl::Error::UnknownPair { .. }
            | fleetrl::Error::Serde(_) => EXIT_USER,
            fleetrl::Error::Io(_) | fleetrl::Error::NonConvergence { .. } => EXIT_INTERNAL,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return EXIT_USER;
    }
    if err.downcast_ref::<serde_json::Error>().is_some() {
        return EXIT_USER;
    }
    EXIT_INTERNAL
}

fn main() {
    let cli = Cli::parse();
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(args, verbose),
        Command::Solve(args) => cmd_solve(args, verbose),
        Command::Simulate(args) => cmd_simulate(args, verbose),
        Command::Sweep(args) => cmd_sweep(args, verbose),
        Command::VerifyBounds(args) => cmd_verify_bounds(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code_for(&err));
    }
}

fn default_n_q() -> usize {
    77
}

fn default_geometry() -> GridGeometry {
    GridGeometry::for_cells(default_n_q(), 2.0).expect("default grid is valid")
}

#[derive(serde::Deserialize)]
struct EstimateConfig {
    #[serde(default = "default_n_q")]
    n_q: usize,
    #[serde(default = "default_geometry")]
    geometry: GridGeometry,
    #[serde(default)]
    windows: Option<u64>,
}

fn cmd_estimate(args: EstimateArgs, verbose: bool) -> anyhow::Result<()> {
    let cfg_text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))?;
    let cfg: EstimateConfig = serde_json::from_str(&cfg_text)
        .with_context(|| format!("invalid estimation config {}", args.config.display()))?;
    let file = std::fs::File::open(&args.trips)
        .with_context(|| format!("cannot open trip file {}", args.trips.display()))?;
    let report = ingest_trips(BufReader::new(file), cfg.n_q, Some(&cfg.geometry))?;
    let windows = cfg.windows.unwrap_or_else(|| {
        report
            .records
            .iter()
            .map(|t| t.start_time)
            .max()
            .map_or(0, |m| m + 1)
    });
    let idle = idle_observations(&report.records, cfg.n_q, windows);
    let model = estimate_demand(&report.records, cfg.n_q, &idle, windows)?;
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&model)?)?;
    println!(
        "rows={} accepted={} rejected={} windows={}",
        report.total_rows,
        report.records.len(),
        report.rejected,
        windows
    );
    if report.high_rejection {
        eprintln!("warning: more than half of the data rows were rejected");
    }
    if verbose {
        println!("model written to {}", args.out.display());
    }
    Ok(())
}

fn ensure_fresh_dir(dir: &Path) -> anyhow::Result<()> {
    if dir.exists() {
        let occupied = std::fs::read_dir(dir)?.next().is_some();
        if occupied {
            return Err(anyhow!(fleetrl::Error::Config(format!(
                "output directory {} is not empty",
                dir.display()
            ))));
        }
    } else {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn cmd_solve(args: SolveArgs, verbose: bool) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.model)
        .with_context(|| format!("cannot read model {}", args.model.display()))?;
    let model: DemandModel = serde_json::from_str(&text)
        .with_context(|| format!("invalid demand model {}", args.model.display()))?;
    model.validate()?;
    let mdp = build_mdp(&model, args.gamma)?;
    let (q, ranked) = solve_mpi(&mdp, args.eval_sweeps, args.tol)?;
    ensure_fresh_dir(&args.out)?;
    let qfile = QTableFile::from_qtable(&q, args.gamma);
    std::fs::write(args.out.join("qtable.json"), qfile.to_json()?)?;
    let pfile = RankedPolicyFile::from_policy(&ranked);
    std::fs::write(args.out.join("policy.json"), pfile.to_json()?)?;
    println!(
        "solved n_q={} pairs={} gamma={}",
        model.n_q,
        q.values().len(),
        args.gamma
    );
    if verbose {
        println!("outputs in {}", args.out.display());
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs, verbose: bool) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))?;
    let mut cfg = SimConfig::from_json(&text)
        .with_context(|| format!("invalid simulation config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let run_dir = args
        .out
        .join(format!("run-{}-s{}", &config_hash(&cfg)[..8], cfg.seed));
    ensure_fresh_dir(&run_dir)?;
    let metrics = run(&cfg)?;
    metrics.write_dir(&run_dir)?;
    std::fs::write(run_dir.join("config.json"), cfg.to_json()?)?;
    println!(
        "policy={} seed={} ticks={} revenue={:.3} trips={}{}",
        cfg.policy.name(),
        cfg.seed,
        metrics.ticks_run,
        metrics.total_revenue(),
        metrics.trip_returns.len(),
        if metrics.ended_early {
            " (ended early: demand exhausted)"
        } else {
            ""
        }
    );
    if verbose {
        println!("run directory: {}", run_dir.display());
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct SweepConfig {
    base: SimConfig,
    #[serde(default)]
    policies: Vec<fleetrl::sim::Policy>,
    #[serde(default)]
    seeds: Vec<u64>,
    #[serde(default)]
    r_comm: Vec<f64>,
    #[serde(default)]
    n_agents: Vec<usize>,
}

fn expand_sweep(sweep: &SweepConfig) -> Vec<SimConfig> {
    let policies = if sweep.policies.is_empty() {
        vec![sweep.base.policy]
    } else {
        sweep.policies.clone()
    };
    let seeds = if sweep.seeds.is_empty() {
        vec![sweep.base.seed]
    } else {
        sweep.seeds.clone()
    };
    let r_comms = if sweep.r_comm.is_empty() {
        vec![sweep.base.game.r_comm]
    } else {
        sweep.r_comm.clone()
    };
    let agent_counts = if sweep.n_agents.is_empty() {
        vec![sweep.base.n_agents]
    } else {
        sweep.n_agents.clone()
    };
    let mut out = Vec::new();
    for &policy in &policies {
        for &seed in &seeds {
            for &r_comm in &r_comms {
                for &n_agents in &agent_counts {
                    let mut cfg = sweep.base.clone();
                    cfg.policy = policy;
                    cfg.seed = seed;
                    cfg.game.r_comm = r_comm;
                    cfg.n_agents = n_agents;
                    out.push(cfg);
                }
            }
        }
    }
    out
}

fn thread_cap() -> usize {
    std::env::var("FLEETRL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_all(cfgs: &[SimConfig], threads: usize) -> anyhow::Result<Vec<(SimConfig, RunMetrics)>> {
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<fleetrl::Result<RunMetrics>>>> = (0..cfgs.len())
        .map(|_| std::sync::Mutex::new(None))
        .collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.min(cfgs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= cfgs.len() {
                    break;
                }
                let outcome = run(&cfgs[i]);
                *slots[i].lock().unwrap() = Some(outcome);
            });
        }
    });
    let mut out = Vec::with_capacity(cfgs.len());
    for (cfg, slot) in cfgs.iter().zip(slots) {
        let metrics = slot
            .into_inner()
            .unwrap()
            .expect("worker filled every slot")?;
        out.push((cfg.clone(), metrics));
    }
    Ok(out)
}

fn cmd_sweep(args: SweepArgs, verbose: bool) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))?;
    let sweep: SweepConfig = serde_json::from_str(&text)
        .with_context(|| format!("invalid sweep config {}", args.config.display()))?;
    let cfgs = expand_sweep(&sweep);
    fleetrl::sim::check_sweep_dims(&cfgs)?;
    ensure_fresh_dir(&args.out)?;
    let threads = thread_cap();
    if verbose {
        println!(
            "running {} configurations on {} threads",
            cfgs.len(),
            threads
        );
    }
    let results = run_all(&cfgs, threads)?;
    for (cfg, metrics) in &results {
        let dir =
            args.out
                .join("runs")
                .join(format!("run-{}-s{}", &config_hash(cfg)[..8], cfg.seed));
        std::fs::create_dir_all(&dir)?;
        metrics.write_dir(&dir)?;
        std::fs::write(dir.join("config.json"), cfg.to_json()?)?;
    }
    let table = compare_metrics(&results)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    std::fs::write(args.out.join("comparison.csv"), &buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}

#[derive(serde::Deserialize)]
struct BoundsConfig {
    #[serde(default)]
    kappa: Option<KappaSection>,
    #[serde(default)]
    tracking: Option<TrackingSection>,
}

#[derive(serde::Deserialize)]
struct KappaSection {
    epsilon: f64,
    delta: f64,
    gamma: f64,
    r_inf: f64,
}

#[derive(serde::Deserialize)]
struct TrackingSection {
    schedule: PathBuf,
    r_max: f64,
    dr_max: f64,
}

fn cmd_verify_bounds(args: VerifyBoundsArgs) -> anyhow::Result<()> {
    let mut did_something = false;
    let file_cfg: Option<BoundsConfig> = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            Some(
                serde_json::from_str(&text)
                    .with_context(|| format!("invalid bounds config {}", path.display()))?,
            )
        }
        None => None,
    };

    let kappa_inputs = match (args.epsilon, args.delta, args.gamma, args.r_inf) {
        (Some(epsilon), Some(delta), Some(gamma), Some(r_inf)) => Some(KappaSection {
            epsilon,
            delta,
            gamma,
            r_inf,
        }),
        (None, None, None, None) => file_cfg.as_ref().and_then(|c| {
            c.kappa.as_ref().map(|k| KappaSection {
                epsilon: k.epsilon,
                delta: k.delta,
                gamma: k.gamma,
                r_inf: k.r_inf,
            })
        }),
        _ => {
            return Err(anyhow!(fleetrl::Error::Config(
                "provide all of --epsilon, --delta, --gamma, --r-inf, or none".into()
            )))
        }
    };

    if let Some(k) = kappa_inputs {
        let (d, kappa) = kappa_bound(k.epsilon, k.delta, k.gamma, k.r_inf)?;
        println!("d = {d}");
        println!("kappa = {kappa}");
        did_something = true;
    }

    if let Some(tracking) = file_cfg.as_ref().and_then(|c| c.tracking.as_ref()) {
        let file = std::fs::File::open(&tracking.schedule)
            .with_context(|| format!("cannot open schedule {}", tracking.schedule.display()))?;
        let graphs = import_schedule(BufReader::new(file))?;
        let bounds = error_bounds(&graphs, tracking.r_max, tracking.dr_max)?;
        println!("max_sigma2 = {}", bounds.max_sigma2);
        println!("delta_q = {}", bounds.delta_q);
        println!("delta_omega = {}", bounds.delta_omega);
        if bounds.disconnected {
            eprintln!(
                "warning: the schedule never contracts (second singular value reaches 1); \
                 tracking bounds are infinite"
            );
        }
        did_something = true;
    }

    if !did_something {
        return Err(anyhow!(fleetrl::Error::Config(
            "nothing to verify: pass kappa flags or a config with kappa/tracking sections".into()
        )));
    }
    Ok(())
}
