//! Trip ingestion and demand estimation.
//!
//! A demand model holds, over an `n_q`-cell grid, the per-pair customer
//! probability `L[i][j]` (probability that a window contains a request from
//! cell `i` to cell `j`), the average per-trip reward `D[i][j]` (mean of
//! `M[i][j] * fare / duration` over matching trips), and the motion factor
//! matrix `M` (1 everywhere unless configured otherwise).
//!
//! The observation window is one simulator tick. To keep row sums feasible
//! for the transition model (`sum_{j != i} L[i][j] <= 1`), at most one
//! outgoing request per origin cell counts per window: the destination with
//! the most requests in that window, ties to the smallest destination index.
//! Requests that start and end in the same cell are counted independently
//! of outgoing ones. `D[i][i]` pools the nonzero in-cell rewards with one
//! zero-reward sample per customer-free window of that cell.

use std::collections::BTreeMap;
use std::io::BufRead;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellId, GridGeometry, Point2};
use crate::matrix::Mat;

/// One historical or simulated ride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub pickup: CellId,
    pub dropoff: CellId,
    /// Window (tick) in which the request appeared.
    pub start_time: u64,
    /// In-vehicle time, ticks. Always positive.
    pub duration: f64,
    /// Nonnegative, currency units.
    pub fare: f64,
}

impl TripRecord {
    /// Realized per-tick reward of this trip: `m * fare / duration`.
    pub fn reward(&self, m: f64) -> f64 {
        m * self.fare / self.duration
    }
}

/// Estimated or synthetic demand parameters for one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub n_q: usize,
    /// Request probability per window, entries in [0, 1].
    pub l: Mat,
    /// Average reward per pair, nonnegative.
    pub d: Mat,
    /// Motion constraint factors, positive.
    pub m: Mat,
}

impl DemandModel {
    pub fn zeros(n_q: usize) -> Self {
        DemandModel {
            n_q,
            l: Mat::zeros(n_q, n_q),
            d: Mat::zeros(n_q, n_q),
            m: Mat::filled(n_q, n_q, 1.0),
        }
    }

    /// Check every model invariant; returns the first violation found.
    pub fn validate(&self) -> Result<()> {
        if self.n_q < 2 {
            return Err(Error::Model(format!(
                "demand model needs n_q >= 2, got {}",
                self.n_q
            )));
        }
        for mat in [&self.l, &self.d, &self.m] {
            if mat.n_rows() != self.n_q || mat.n_cols() != self.n_q {
                return Err(Error::Shape(format!(
                    "demand matrices must be {0}x{0}",
                    self.n_q
                )));
            }
        }
        for i in 0..self.n_q {
            let mut row_sum = 0.0;
            for j in 0..self.n_q {
                let l = self.l.get(i, j);
                if !(0.0..=1.0).contains(&l) {
                    return Err(Error::Model(format!("L[{i}][{j}] = {l} outside [0, 1]")));
                }
                if self.d.get(i, j) < 0.0 {
                    return Err(Error::Model(format!("D[{i}][{j}] is negative")));
                }
                if self.m.get(i, j) <= 0.0 {
                    return Err(Error::Model(format!("M[{i}][{j}] must be positive")));
                }
                row_sum += l;
            }
            // feasibility of the stay probability 1 + L[i][i] - sum_j L[i][j]
            if row_sum > 1.0 + self.l.get(i, i) + 1e-12 {
                return Err(Error::Model(format!(
                    "row {i}: sum_j L[{i}][j] = {row_sum} exceeds 1 + L[{i}][{i}]"
                )));
            }
        }
        Ok(())
    }

    /// Expected immediate reward of committing to the trip `i -> j`: the
    /// reward-model entry used both by the planner and by task utilities.
    /// Off-diagonal this is `D[i][j]`; on the diagonal it is the expected
    /// reward conditioned on remaining in the cell.
    pub fn expected_reward(&self, i: usize, j: usize) -> f64 {
        if i != j {
            return self.d.get(i, j);
        }
        let row_sum: f64 = self.l.row(i).iter().sum();
        let denom = 1.0 + self.l.get(i, i) - row_sum;
        if denom <= 0.0 {
            return 0.0;
        }
        self.l.get(i, i) * self.d.get(i, i) / denom
    }
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// Result of reading a trip file: validated records plus rejection stats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: Vec<TripRecord>,
    pub rejected: usize,
    pub total_rows: usize,
    /// Set when more than half of the data rows were rejected.
    pub high_rejection: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TripColumns {
    Cells {
        pickup: usize,
        dropoff: usize,
        start: usize,
        duration: usize,
        fare: usize,
    },
    Points {
        px: usize,
        py: usize,
        dx: usize,
        dy: usize,
        start: usize,
        duration: usize,
        fare: usize,
    },
}

fn find_col(header: &[&str], names: &[&str]) -> Option<usize> {
    header.iter().position(|h| names.contains(h))
}

fn parse_header(line: &str) -> Result<TripColumns> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    let start = find_col(&cols, &["start_time"]);
    let duration = find_col(&cols, &["duration"]);
    let fare = find_col(&cols, &["fare"]);
    let (start, duration, fare) = match (start, duration, fare) {
        (Some(s), Some(d), Some(f)) => (s, d, f),
        _ => {
            return Err(Error::Parse {
                row: 1,
                message: "header must name start_time, duration and fare columns".into(),
            })
        }
    };
    if let (Some(p), Some(d)) = (
        find_col(&cols, &["pickup_cell"]),
        find_col(&cols, &["dropoff_cell"]),
    ) {
        return Ok(TripColumns::Cells {
            pickup: p,
            dropoff: d,
            start,
            duration,
            fare,
        });
    }
    let px = find_col(&cols, &["pickup_x", "pickup_lon"]);
    let py = find_col(&cols, &["pickup_y", "pickup_lat"]);
    let dx = find_col(&cols, &["dropoff_x", "dropoff_lon"]);
    let dy = find_col(&cols, &["dropoff_y", "dropoff_lat"]);
    if let (Some(px), Some(py), Some(dx), Some(dy)) = (px, py, dx, dy) {
        return Ok(TripColumns::Points {
            px,
            py,
            dx,
            dy,
            start,
            duration,
            fare,
        });
    }
    Err(Error::Parse {
        row: 1,
        message: "header must name pickup_cell/dropoff_cell or pickup/dropoff coordinate columns"
            .into(),
    })
}

fn parse_row(
    fields: &[&str],
    cols: TripColumns,
    n_q: usize,
    geometry: Option<&GridGeometry>,
) -> Option<TripRecord> {
    let field = |idx: usize| fields.get(idx).map(|s| s.trim());
    let num = |idx: usize| field(idx)?.parse::<f64>().ok();
    let (pickup, dropoff, start, duration, fare) = match cols {
        TripColumns::Cells {
            pickup,
            dropoff,
            start,
            duration,
            fare,
        } => {
            let p = field(pickup)?.parse::<usize>().ok()?;
            let d = field(dropoff)?.parse::<usize>().ok()?;
            if p >= n_q || d >= n_q {
                return None;
            }
            (CellId(p), CellId(d), start, duration, fare)
        }
        TripColumns::Points {
            px,
            py,
            dx,
            dy,
            start,
            duration,
            fare,
        } => {
            let geometry = geometry?;
            let p = geometry.locate(Point2::new(num(px)?, num(py)?))?;
            let d = geometry.locate(Point2::new(num(dx)?, num(dy)?))?;
            if p.0 >= n_q || d.0 >= n_q {
                return None;
            }
            (p, d, start, duration, fare)
        }
    };
    let start_time = field(start)?.parse::<u64>().ok()?;
    let duration = num(duration)?;
    let fare = num(fare)?;
    if !(duration > 0.0) || !(fare >= 0.0) {
        return None;
    }
    Some(TripRecord {
        pickup,
        dropoff,
        start_time,
        duration,
        fare,
    })
}

/// Read a delimited trip file. Malformed rows are dropped and counted;
/// unreadable input or a bad header is fatal.
pub fn ingest_trips<R: BufRead>(
    reader: R,
    n_q: usize,
    geometry: Option<&GridGeometry>,
) -> Result<IngestReport> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => {
            return Err(Error::Parse {
                row: 1,
                message: "empty input: missing header".into(),
            })
        }
    };
    let cols = parse_header(&header)?;

    let mut records = Vec::new();
    let mut rejected = 0;
    let mut total_rows = 0;
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::Parse {
            row: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        total_rows += 1;
        let fields: Vec<&str> = line.split(',').collect();
        match parse_row(&fields, cols, n_q, geometry) {
            Some(rec) => records.push(rec),
            None => rejected += 1,
        }
    }
    let high_rejection = rejected * 2 > total_rows;
    Ok(IngestReport {
        records,
        rejected,
        total_rows,
        high_rejection,
    })
}

// ---------------------------------------------------------------------------
// Estimation
// ---------------------------------------------------------------------------

/// Number of customer-free windows per cell, derived from the trip list and
/// the total window count: a window is customer-free for cell `i` when no
/// request originates there.
pub fn idle_observations(trips: &[TripRecord], n_q: usize, total_windows: u64) -> Vec<u64> {
    let mut seen: Vec<std::collections::BTreeSet<u64>> = vec![Default::default(); n_q];
    for t in trips {
        if t.pickup.0 < n_q {
            seen[t.pickup.0].insert(t.start_time);
        }
    }
    seen.iter()
        .map(|w| total_windows.saturating_sub(w.len() as u64))
        .collect()
}

/// Estimate a demand model from trip records with unit motion factors.
pub fn estimate_demand(
    trips: &[TripRecord],
    n_q: usize,
    idle_obs: &[u64],
    total_windows: u64,
) -> Result<DemandModel> {
    estimate_demand_with_motion(
        trips,
        n_q,
        idle_obs,
        total_windows,
        Mat::filled(n_q, n_q, 1.0),
    )
}

/// Estimate a demand model from trip records.
///
/// `idle_obs[i]` adds that many zero-reward samples to the `D[i][i]` pool;
/// `total_windows` is the number of observation windows the records cover.
pub fn estimate_demand_with_motion(
    trips: &[TripRecord],
    n_q: usize,
    idle_obs: &[u64],
    total_windows: u64,
    motion: Mat,
) -> Result<DemandModel> {
    if n_q < 2 {
        return Err(Error::Model(format!(
            "estimation needs n_q >= 2, got {n_q}"
        )));
    }
    if idle_obs.len() != n_q {
        return Err(Error::Shape(format!("idle_obs must have {n_q} entries")));
    }
    if motion.n_rows() != n_q || motion.n_cols() != n_q {
        return Err(Error::Shape(format!("motion matrix must be {n_q}x{n_q}")));
    }
    for t in trips {
        if t.pickup.0 >= n_q || t.dropoff.0 >= n_q {
            return Err(Error::Model(format!(
                "trip references cell outside the {n_q}-cell grid"
            )));
        }
        if !(t.duration > 0.0) {
            return Err(Error::Model("trip with nonpositive duration".into()));
        }
    }

    // per-pair reward samples; summed in sorted order so the estimate is
    // independent of the trip list's order down to the last bit
    let mut rewards: Vec<Vec<f64>> = vec![Vec::new(); n_q * n_q];
    // per (origin, window): request counts per destination
    let mut window_dest: BTreeMap<(usize, u64), Vec<u32>> = BTreeMap::new();
    for t in trips {
        let (i, j) = (t.pickup.0, t.dropoff.0);
        rewards[i * n_q + j].push(t.reward(motion.get(i, j)));
        window_dest
            .entry((i, t.start_time))
            .or_insert_with(|| vec![0; n_q])[j] += 1;
    }
    let mut reward_sum = Mat::zeros(n_q, n_q);
    let mut trip_count = vec![0u64; n_q * n_q];
    for (flat, samples) in rewards.iter_mut().enumerate() {
        samples.sort_by(f64::total_cmp);
        reward_sum.add(flat / n_q, flat % n_q, samples.iter().sum());
        trip_count[flat] = samples.len() as u64;
    }

    // window counts per pair under the one-outgoing-request-per-window rule
    let mut window_count = vec![0u64; n_q * n_q];
    for ((i, _w), dests) in &window_dest {
        let mut dominant: Option<usize> = None;
        for (j, &c) in dests.iter().enumerate() {
            if j == *i || c == 0 {
                continue;
            }
            dominant = match dominant {
                Some(best) if dests[best] >= c => Some(best),
                _ => Some(j),
            };
        }
        if let Some(j) = dominant {
            window_count[i * n_q + j] += 1;
        }
        if dests[*i] > 0 {
            window_count[i * n_q + i] += 1;
        }
    }

    let mut model = DemandModel::zeros(n_q);
    model.m = motion;
    for i in 0..n_q {
        for j in 0..n_q {
            if total_windows > 0 {
                model.l.set(
                    i,
                    j,
                    window_count[i * n_q + j] as f64 / total_windows as f64,
                );
            }
            let mut count = trip_count[i * n_q + j] as f64;
            if i == j {
                count += idle_obs[i] as f64;
            }
            if count > 0.0 {
                model.d.set(i, j, reward_sum.get(i, j) / count);
            }
        }
    }
    model.validate()?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Synthetic scenarios
// ---------------------------------------------------------------------------

/// Scalar broadcast or full per-pair matrix in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSpec {
    Uniform(f64),
    Matrix(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn resolve(&self, n_q: usize, name: &str) -> Result<Mat> {
        match self {
            MatrixSpec::Uniform(v) => Ok(Mat::filled(n_q, n_q, *v)),
            MatrixSpec::Matrix(rows) => {
                let m = Mat::from_rows(rows.clone())?;
                if m.n_rows() != n_q || m.n_cols() != n_q {
                    return Err(Error::Config(format!("{name} matrix must be {n_q}x{n_q}")));
                }
                Ok(m)
            }
        }
    }
}

/// Deterministic schedule of rate/fare changes, multiplicative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftSpec {
    Step {
        at_tick: u64,
        rate_scale: f64,
        fare_scale: f64,
    },
    Sinusoid {
        period: f64,
        rate_amp: f64,
        fare_amp: f64,
    },
}

impl DriftSpec {
    /// (rate_scale, fare_scale) at a tick.
    fn scales(&self, tick: u64) -> (f64, f64) {
        match *self {
            DriftSpec::Step {
                at_tick,
                rate_scale,
                fare_scale,
            } => {
                if tick >= at_tick {
                    (rate_scale, fare_scale)
                } else {
                    (1.0, 1.0)
                }
            }
            DriftSpec::Sinusoid {
                period,
                rate_amp,
                fare_amp,
            } => {
                let phase = (2.0 * std::f64::consts::PI * tick as f64 / period).sin();
                (1.0 + rate_amp * phase, 1.0 + fare_amp * phase)
            }
        }
    }

    fn max_rate_scale(&self) -> f64 {
        match *self {
            DriftSpec::Step { rate_scale, .. } => rate_scale.max(1.0),
            DriftSpec::Sinusoid { rate_amp, .. } => 1.0 + rate_amp.abs(),
        }
    }

    fn min_scales(&self) -> (f64, f64) {
        match *self {
            DriftSpec::Step {
                rate_scale,
                fare_scale,
                ..
            } => (rate_scale.min(1.0), fare_scale.min(1.0)),
            DriftSpec::Sinusoid {
                rate_amp, fare_amp, ..
            } => (1.0 - rate_amp.abs(), 1.0 - fare_amp.abs()),
        }
    }
}

/// Description of a synthetic demand scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_q: usize,
    pub geometry: GridGeometry,
    /// Request probability per window and pair.
    pub rate: MatrixSpec,
    /// Mean fare per pair.
    pub fare: MatrixSpec,
    /// Trip duration per pair, ticks.
    pub duration: MatrixSpec,
    /// Fares draw uniformly from `mean * (1 +- fare_jitter)`.
    #[serde(default)]
    pub fare_jitter: f64,
    #[serde(default)]
    pub motion: Option<MatrixSpec>,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
}

/// Seeded trip-stream generator over a synthetic scenario.
///
/// Per window and origin cell, at most one outgoing request spawns
/// (categorical over destinations with the configured rates) plus an
/// independent in-cell request with probability `rate[i][i]`, so empirical
/// frequencies converge to the configured rates.
#[derive(Debug, Clone)]
pub struct SynthDemand {
    n_q: usize,
    rate: Mat,
    fare: Mat,
    duration: Mat,
    fare_jitter: f64,
    motion: Mat,
    drift: Option<DriftSpec>,
    rng: ChaCha8Rng,
    next_tick: u64,
}

impl SynthDemand {
    pub fn new(spec: &ScenarioSpec, seed: u64) -> Result<Self> {
        let n_q = spec.n_q;
        if n_q < 2 {
            return Err(Error::Config(format!("scenario needs n_q >= 2, got {n_q}")));
        }
        if spec.geometry.n_cells() != n_q {
            return Err(Error::Config(format!(
                "geometry has {} cells but scenario declares n_q = {n_q}",
                spec.geometry.n_cells()
            )));
        }
        let rate = spec.rate.resolve(n_q, "rate")?;
        let fare = spec.fare.resolve(n_q, "fare")?;
        let duration = spec.duration.resolve(n_q, "duration")?;
        let motion = match &spec.motion {
            Some(m) => m.resolve(n_q, "motion")?,
            None => Mat::filled(n_q, n_q, 1.0),
        };
        if !(0.0..=1.0).contains(&spec.fare_jitter) {
            return Err(Error::Config("fare_jitter must lie in [0, 1]".into()));
        }
        let max_rate_scale = spec.drift.as_ref().map_or(1.0, DriftSpec::max_rate_scale);
        if let Some(d) = &spec.drift {
            let (rs, fs) = d.min_scales();
            if rs < 0.0 || fs < 0.0 {
                return Err(Error::Config("drift scales must stay nonnegative".into()));
            }
        }
        for i in 0..n_q {
            let mut off_sum = 0.0;
            for j in 0..n_q {
                let r = rate.get(i, j) * max_rate_scale;
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::Config(format!(
                        "rate[{i}][{j}] leaves [0, 1] under drift (peak {r})"
                    )));
                }
                if rate.get(i, j) > 0.0 && !(duration.get(i, j) > 0.0) {
                    return Err(Error::Config(format!(
                        "duration[{i}][{j}] must be positive where rate > 0"
                    )));
                }
                if fare.get(i, j) < 0.0 {
                    return Err(Error::Config(format!("fare[{i}][{j}] is negative")));
                }
                if motion.get(i, j) <= 0.0 {
                    return Err(Error::Config(format!("motion[{i}][{j}] must be positive")));
                }
                if j != i {
                    off_sum += r;
                }
            }
            if off_sum > 1.0 + 1e-12 {
                return Err(Error::Config(format!(
                    "cell {i}: outgoing request rates sum to {off_sum} > 1 under drift; \
                     the stay probability would be negative"
                )));
            }
        }
        Ok(SynthDemand {
            n_q,
            rate,
            fare,
            duration,
            fare_jitter: spec.fare_jitter,
            motion,
            drift: spec.drift.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_tick: 0,
        })
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    /// True model parameters in force at a tick.
    pub fn model_at(&self, tick: u64) -> DemandModel {
        let (rate_scale, fare_scale) = self.drift.as_ref().map_or((1.0, 1.0), |d| d.scales(tick));
        let mut model = DemandModel::zeros(self.n_q);
        model.m = self.motion.clone();
        for i in 0..self.n_q {
            for j in 0..self.n_q {
                model.l.set(i, j, self.rate.get(i, j) * rate_scale);
                let t = self.duration.get(i, j);
                if t > 0.0 {
                    model.d.set(
                        i,
                        j,
                        self.motion.get(i, j) * self.fare.get(i, j) * fare_scale / t,
                    );
                }
            }
        }
        model
    }

    /// Model at tick zero.
    pub fn model(&self) -> DemandModel {
        self.model_at(0)
    }

    /// Requests spawning in the next window. Advances the stream.
    pub fn next_window(&mut self) -> Vec<TripRecord> {
        let tick = self.next_tick;
        self.next_tick += 1;
        let (rate_scale, fare_scale) = self.drift.as_ref().map_or((1.0, 1.0), |d| d.scales(tick));
        let mut out = Vec::new();
        for i in 0..self.n_q {
            // one categorical draw over outgoing destinations
            let u: f64 = self.rng.gen();
            let mut acc = 0.0;
            for j in 0..self.n_q {
                if j == i {
                    continue;
                }
                let r = self.rate.get(i, j) * rate_scale;
                if r <= 0.0 {
                    continue;
                }
                acc += r;
                if u < acc {
                    out.push(self.spawn(i, j, tick, fare_scale));
                    break;
                }
            }
            // independent in-cell request
            let diag = self.rate.get(i, i) * rate_scale;
            if diag > 0.0 {
                let u2: f64 = self.rng.gen();
                if u2 < diag {
                    out.push(self.spawn(i, i, tick, fare_scale));
                }
            }
        }
        out
    }

    fn spawn(&mut self, i: usize, j: usize, tick: u64, fare_scale: f64) -> TripRecord {
        let mean = self.fare.get(i, j) * fare_scale;
        let fare = if self.fare_jitter > 0.0 {
            let u: f64 = self.rng.gen_range(-1.0..1.0);
            mean * (1.0 + self.fare_jitter * u)
        } else {
            mean
        };
        TripRecord {
            pickup: CellId(i),
            dropoff: CellId(j),
            start_time: tick,
            duration: self.duration.get(i, j),
            fare,
        }
    }
}
