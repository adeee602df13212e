//! Discrete-event simulation of the finite `N`-user time-stationary system.
//!
//! Tasks arrive as a Poisson stream of rate `lambda * N`. Each task draws a
//! type from the support distribution and offloads with probability
//! `pi[type]`. Local tasks finish after exactly `L/f`. Offloaded tasks first
//! spend `W/R` in transmission and then join the MEC pool of rate
//! `N * f_per`, whose capacity is split equally (see [`PoolSharing`]).
//!
//! The observable is `N_tot(t) / N`, the number of offloaded tasks still in
//! the system (transmitting or in the pool) per user.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::finite::TypeSampler;
use crate::model::{CostModel, Policy, StationaryScenario};
use crate::seed;

/// How the pool capacity is divided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolSharing {
    /// Every offloaded task in the system holds one equal share, including
    /// tasks still transmitting, whose shares go unused. Each pool task is
    /// served at `f_pool / N_tot`; this is the discipline under which
    /// `N_tot / N` tends to [`stationary_prediction`].
    #[default]
    AllOffloaded,
    /// Egalitarian processor sharing among pool tasks only.
    InPoolOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimOptions {
    pub n_users: usize,
    /// Seconds.
    pub horizon: f64,
    /// Number of uniform sample times on `[0, horizon]`, both ends included.
    pub grid_points: usize,
    pub sharing: PoolSharing,
    /// Keep a per-event log in the returned trajectory.
    pub record_events: bool,
}

impl SimOptions {
    /// Horizon `40 / lambda`, 200 grid points.
    pub fn for_scenario(s: &StationaryScenario, n_users: usize) -> Self {
        Self {
            n_users,
            horizon: 40.0 / s.lambda(),
            grid_points: 200,
            sharing: PoolSharing::default(),
            record_events: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::InvalidParameter { name: "N", value: 0.0 });
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidParameter { name: "horizon", value: self.horizon });
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidParameter { name: "grid_points", value: self.grid_points as f64 });
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Vec<f64> {
        let last = (self.grid_points - 1) as f64;
        (0..self.grid_points).map(|i| self.horizon * i as f64 / last).collect()
    }
}

pub const DEFAULT_TRAJECTORIES: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Transmitting,
    InPool,
    Local,
}

/// A task in flight. `due` is a completion time for transmitting and local
/// tasks and a cumulative per-task service level for pool tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub id: u64,
    pub type_index: usize,
    pub offloaded: bool,
    pub arrival_time: f64,
    pub phase: Phase,
    due: f64,
}

impl Eq for Job {}

impl Ord for Job {
    fn cmp(&self, other: &Self) -> Ordering {
        self.due.total_cmp(&other.due).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Job {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    ArriveLocal,
    ArriveOffload,
    /// Transmission finished; the task enters the pool.
    EnterPool,
    PoolDone,
    LocalDone,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::ArriveLocal => "arrive-local",
            EventKind::ArriveOffload => "arrive-offload",
            EventKind::EnterPool => "enter-pool",
            EventKind::PoolDone => "pool-done",
            EventKind::LocalDone => "local-done",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub job_id: u64,
    pub type_index: usize,
    pub kind: EventKind,
    /// Counts after the event.
    pub pool_size: usize,
    pub in_transit: usize,
    /// Outstanding pool work in cycles just before and just after the event.
    pub pool_work_before: f64,
    pub pool_work_after: f64,
}

/// Writes one tab-separated line per event after a `#`-prefixed header.
pub fn write_event_log<W: Write>(events: &[Event], mut out: W) -> io::Result<()> {
    writeln!(out, "#time\tjob_id\ttype\tkind\tpool_size\tin_transit\tpool_work_before\tpool_work_after")?;
    for e in events {
        writeln!(
            out,
            "{:.17e}\t{}\t{}\t{}\t{}\t{}\t{:.17e}\t{:.17e}",
            e.time,
            e.job_id,
            e.type_index,
            e.kind.as_str(),
            e.pool_size,
            e.in_transit,
            e.pool_work_before,
            e.pool_work_after
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub time_grid: Vec<f64>,
    pub ntot_over_n: Vec<f64>,
    /// Exact time average of `N_tot / N` over `[horizon/2, horizon]`.
    pub tail_mean: f64,
    pub events: Option<Vec<Event>>,
}

struct Pool {
    jobs: BinaryHeap<Reverse<Job>>,
    /// Service each pool task has received since the start of the run.
    level: f64,
    /// Sum of `due` over pool tasks; outstanding work is `due_sum - n * level`.
    due_sum: f64,
}

impl Pool {
    fn work(&self) -> f64 {
        (self.due_sum - self.jobs.len() as f64 * self.level).max(0.0)
    }
}

/// One sample path.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    s: &StationaryScenario,
    pi: &Policy,
    opts: &SimOptions,
    rng: &mut R,
) -> Result<Trajectory> {
    opts.validate()?;
    let k = s.distribution().len();
    if pi.len() != k {
        return Err(Error::LengthMismatch { expected: k, found: pi.len() });
    }
    let n = opts.n_users as f64;
    let f_pool = n * s.f_per();
    let horizon = opts.horizon;
    let tail_start = 0.5 * horizon;
    let configs: Vec<_> = s.distribution().configs().copied().collect();
    let sampler = TypeSampler::new(s.distribution());
    let interarrival = Exp::new(s.lambda() * n).expect("positive arrival rate");

    let time_grid = opts.time_grid();
    let mut samples = Vec::with_capacity(time_grid.len());
    let mut events = opts.record_events.then(Vec::new);

    let mut now = 0.0;
    let mut tail_area = 0.0;
    let mut next_id = 0u64;
    let mut next_arrival = interarrival.sample(rng);
    let mut transit: BinaryHeap<Reverse<Job>> = BinaryHeap::new();
    let mut local: BinaryHeap<Reverse<Job>> = BinaryHeap::new();
    let mut pool = Pool { jobs: BinaryHeap::new(), level: 0.0, due_sum: 0.0 };

    let per_task_rate = |transit: usize, pooled: usize| -> f64 {
        if pooled == 0 {
            return 0.0;
        }
        match opts.sharing {
            PoolSharing::AllOffloaded => f_pool / (transit + pooled) as f64,
            PoolSharing::InPoolOnly => f_pool / pooled as f64,
        }
    };

    loop {
        let rate = per_task_rate(transit.len(), pool.jobs.len());
        let pool_next = pool.jobs.peek().map(|Reverse(j)| (now + (j.due - pool.level).max(0.0) / rate, j.id));
        let transit_next = transit.peek().map(|Reverse(j)| (j.due, j.id));
        let local_next = local.peek().map(|Reverse(j)| (j.due, j.id));

        // earliest completion, ties by job id; completions precede arrivals
        let completion = [pool_next, transit_next, local_next]
            .into_iter()
            .enumerate()
            .filter_map(|(src, c)| c.map(|(t, id)| (t, id, src)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let event_time = match completion {
            Some((t, _, _)) if t <= next_arrival => t,
            _ => next_arrival,
        };

        let count = (transit.len() + pool.jobs.len()) as f64 / n;
        let stop = event_time > horizon;
        let until = if stop { horizon } else { event_time };
        while samples.len() < time_grid.len() && time_grid[samples.len()] < until {
            samples.push(count);
        }
        if until > tail_start {
            tail_area += count * (until - now.max(tail_start));
        }
        if stop {
            while samples.len() < time_grid.len() {
                samples.push(count);
            }
            break;
        }
        pool.level += rate * (event_time - now);
        now = event_time;
        let work_before = pool.work();

        let (job, kind) = match completion {
            Some((t, _, src)) if t <= next_arrival => match src {
                0 => {
                    let Reverse(job) = pool.jobs.pop().expect("peeked");
                    pool.level = pool.level.max(job.due);
                    pool.due_sum -= job.due;
                    if pool.jobs.is_empty() {
                        pool.due_sum = 0.0;
                    }
                    (job, EventKind::PoolDone)
                }
                1 => {
                    let Reverse(mut job) = transit.pop().expect("peeked");
                    job.phase = Phase::InPool;
                    job.due = pool.level + configs[job.type_index].l;
                    pool.due_sum += job.due;
                    pool.jobs.push(Reverse(job));
                    (job, EventKind::EnterPool)
                }
                _ => {
                    let Reverse(job) = local.pop().expect("peeked");
                    (job, EventKind::LocalDone)
                }
            },
            _ => {
                next_arrival = now + interarrival.sample(rng);
                let type_index = sampler.sample(rng);
                let u: f64 = rng.random();
                let offloaded = u < pi[type_index];
                let c = &configs[type_index];
                let job = Job {
                    id: next_id,
                    type_index,
                    offloaded,
                    arrival_time: now,
                    phase: if offloaded { Phase::Transmitting } else { Phase::Local },
                    due: now + if offloaded { c.transmission_time() } else { c.local_time() },
                };
                next_id += 1;
                if offloaded {
                    transit.push(Reverse(job));
                    (job, EventKind::ArriveOffload)
                } else {
                    // local tasks never touch the observable; track them only for the log
                    if events.is_some() {
                        local.push(Reverse(job));
                    }
                    (job, EventKind::ArriveLocal)
                }
            }
        };

        if let Some(log) = events.as_mut() {
            log.push(Event {
                time: now,
                job_id: job.id,
                type_index: job.type_index,
                kind,
                pool_size: pool.jobs.len(),
                in_transit: transit.len(),
                pool_work_before: work_before,
                pool_work_after: pool.work(),
            });
        }
    }

    Ok(Trajectory { time_grid, ntot_over_n: samples, tail_mean: tail_area / (horizon - tail_start), events })
}

/// Mean-field number of offloaded tasks in the system per user,
/// `lambda * (A + B / f_alloc)`.
pub fn stationary_prediction(s: &StationaryScenario, pi: &Policy) -> Result<f64> {
    s.mean_jobs_per_user(pi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryEnsemble {
    pub time_grid: Vec<f64>,
    pub mean_ntot_over_n: Vec<f64>,
    /// Standard error of the mean at each grid time.
    pub ci68_halfwidth: Vec<f64>,
    pub trajectories: usize,
    pub n_users: usize,
    /// Ensemble mean of the per-trajectory tail averages, and its standard
    /// error.
    pub tail_mean: f64,
    pub tail_ci68: f64,
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, count: usize) -> (f64, f64) {
    let m = count as f64;
    let mean = values.clone().sum::<f64>() / m;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Independent trajectories with per-trajectory derived seeds, reduced in
/// trajectory order.
pub fn run_ensemble(
    s: &StationaryScenario,
    pi: &Policy,
    opts: &SimOptions,
    trajectories: usize,
    seed_value: u64,
) -> Result<TrajectoryEnsemble> {
    if trajectories < 2 {
        return Err(Error::TooFewTrajectories { min: 2, found: trajectories });
    }
    let opts = SimOptions { record_events: false, ..*opts };
    let runs: Vec<Trajectory> = (0..trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::stream(seed_value, seed::QUEUE_TRAJECTORY, i as u64);
            simulate_trajectory(s, pi, &opts, &mut rng)
        })
        .collect::<Result<_>>()?;

    let time_grid = opts.time_grid();
    let (mean_ntot_over_n, ci68_halfwidth) =
        (0..time_grid.len()).map(|g| mean_and_se(runs.iter().map(|r| r.ntot_over_n[g]), trajectories)).unzip();
    let (tail_mean, tail_ci68) = mean_and_se(runs.iter().map(|r| r.tail_mean), trajectories);
    Ok(TrajectoryEnsemble {
        time_grid,
        mean_ntot_over_n,
        ci68_halfwidth,
        trajectories,
        n_users: opts.n_users,
        tail_mean,
        tail_ci68,
    })
}
