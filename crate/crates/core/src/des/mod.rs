//! Finite-system discrete-event simulator.
//!
//! One simulation instance is strictly sequential and deterministic given
//! its seed: jobs arrive as a Poisson process of total rate `n * lambda`
//! (each to a uniformly random dispatcher), services are exponential with
//! mean 1, and each busy server has exactly one pending completion event on
//! the calendar. Ties in event time break by insertion order.

mod stats;

pub use stats::{collect_stats, SimStats};

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{AssignmentPolicy, ConfigError, IQueueDiscipline, SystemConfig};
use stats::SojournAccumulator;

pub const DEFAULT_WARMUP: f64 = 5_000.0;
pub const DEFAULT_HORIZON: f64 = 10_000.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("finite-system simulation needs a server count")]
    MissingServerCount,
    #[error("JIQ simulation needs a dispatcher count")]
    MissingDispatcherCount,
    #[error("horizon {horizon} must exceed the warm-up boundary {warmup}")]
    InvalidWindow { warmup: f64, horizon: f64 },
    #[error("no jobs completed inside the measurement window")]
    EmptyWindow,
    #[error("internal consistency fault: {0}")]
    ConsistencyFault(String),
}

/// How an individual job reached its server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    /// Popped from a dispatcher's I-queue.
    FromIQueue,
    /// The dispatcher's I-queue was empty; a uniformly random server got it.
    RandomFallback,
    /// Supermarket policy: least loaded of `d` probed servers.
    SupermarketChoice,
}

impl Assignment {
    pub fn label(&self) -> &'static str {
        match self {
            Assignment::FromIQueue => "iqueue",
            Assignment::RandomFallback => "random",
            Assignment::SupermarketChoice => "supermarket",
        }
    }
}

/// A completed job, for optional per-trial dumps.
#[derive(Debug, Clone, Copy)]
pub struct JobRecord {
    pub arrival: f64,
    pub completion: f64,
    pub server: u32,
    pub assignment: Assignment,
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Arrival { dispatcher: u32 },
    Completion { server: u32 },
}

#[derive(Debug, Clone, Copy)]
struct EventEntry {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for EventEntry {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for EventEntry {}
impl PartialOrd for EventEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for EventEntry {
    // BinaryHeap pops the maximum; reverse so the earliest time (then the
    // earliest insertion) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingJob {
    arrival: f64,
    assignment: Assignment,
}

#[derive(Debug, Clone, Default)]
struct Server {
    job_count: u32,
    enqueued_at: Option<u32>,
    /// In-flight jobs in arrival order; the front one is in service.
    jobs: VecDeque<PendingJob>,
}

/// A running simulation instance.
pub struct Simulation {
    n: usize,
    m: usize,
    policy: AssignmentPolicy,
    discipline: IQueueDiscipline,
    z: u32,
    warmup: f64,

    rng: ChaCha8Rng,
    time: f64,
    seq: u64,
    calendar: BinaryHeap<EventEntry>,
    servers: Vec<Server>,
    iqueues: Vec<VecDeque<u32>>,
    exp_arrival: Exp<f64>,
    exp_service: Exp<f64>,
    probe_buf: Vec<u32>,

    window: (f64, f64),
    acc: SojournAccumulator,
    records: Option<Vec<JobRecord>>,
    pub arrivals: u64,
    pub completions: u64,
    pub dispatcher_arrivals: Vec<u64>,
}

impl Simulation {
    /// Builds a simulation from a validated config: all servers idle and
    /// unenqueued, all I-queues empty, first arrival pre-scheduled, RNG
    /// seeded deterministically.
    pub fn new(cfg: &SystemConfig, seed: u64) -> Result<Self, SimError> {
        let cfg = cfg.clone().validated()?;
        let n = cfg.n.ok_or(SimError::MissingServerCount)? as usize;
        let m = if cfg.policy.is_jiq() {
            cfg.m.ok_or(SimError::MissingDispatcherCount)? as usize
        } else {
            // The supermarket policy routes jobs straight to servers; a
            // single nominal dispatcher keeps the arrival bookkeeping.
            cfg.m.map(|m| m as usize).unwrap_or(1)
        };

        let mut sim = Simulation {
            n,
            m,
            policy: cfg.policy,
            discipline: cfg.discipline.unwrap_or_default(),
            z: cfg.z,
            warmup: DEFAULT_WARMUP,
            rng: ChaCha8Rng::seed_from_u64(seed),
            time: 0.0,
            seq: 0,
            calendar: BinaryHeap::with_capacity(n + 2),
            servers: vec![Server::default(); n],
            iqueues: vec![VecDeque::new(); if cfg.policy.is_jiq() { m } else { 0 }],
            exp_arrival: Exp::new(n as f64 * cfg.lambda).expect("positive arrival rate"),
            exp_service: Exp::new(1.0).expect("positive service rate"),
            probe_buf: Vec::new(),
            window: (DEFAULT_WARMUP, f64::INFINITY),
            acc: SojournAccumulator::default(),
            records: None,
            arrivals: 0,
            completions: 0,
            dispatcher_arrivals: vec![0; m],
        };
        sim.schedule_arrival();
        Ok(sim)
    }

    /// Start of the measurement window (time units). Default 5000.
    pub fn set_warmup(&mut self, warmup: f64) {
        self.warmup = warmup;
        self.window.0 = warmup;
    }

    /// Keep per-job records of every completion for later dumping.
    pub fn enable_recording(&mut self) {
        self.records = Some(Vec::new());
    }

    pub fn records(&self) -> Option<&[JobRecord]> {
        self.records.as_deref()
    }

    pub fn clock(&self) -> f64 {
        self.time
    }

    pub fn server_loads(&self) -> Vec<u32> {
        self.servers.iter().map(|s| s.job_count).collect()
    }

    /// Processes events until the next event would exceed `horizon`, then
    /// returns statistics over the window `(warmup, horizon)`.
    pub fn run(&mut self, horizon: f64) -> Result<SimStats, SimError> {
        if !(horizon > self.warmup) {
            return Err(SimError::InvalidWindow {
                warmup: self.warmup,
                horizon,
            });
        }
        self.window = (self.warmup, horizon);
        while self.process_next_event(horizon)? {}
        let loads = self.server_loads();
        self.acc.finalize(&loads).ok_or(SimError::EmptyWindow)
    }

    /// Pops and applies one event; `Ok(false)` when the calendar is empty or
    /// the next event lies beyond the horizon.
    fn process_next_event(&mut self, horizon: f64) -> Result<bool, SimError> {
        let Some(&entry) = self.calendar.peek() else {
            return Ok(false);
        };
        if entry.time > horizon {
            return Ok(false);
        }
        self.calendar.pop();
        debug_assert!(entry.time >= self.time, "event calendar went backwards");
        self.time = entry.time;
        match entry.kind {
            EventKind::Arrival { dispatcher } => self.handle_arrival(dispatcher),
            EventKind::Completion { server } => self.handle_completion(server)?,
        }
        Ok(true)
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.calendar.push(EventEntry { time, seq, kind });
    }

    fn schedule_arrival(&mut self) {
        let dt = self.exp_arrival.sample(&mut self.rng);
        let dispatcher = self.rng.random_range(0..self.m as u32);
        self.schedule(self.time + dt, EventKind::Arrival { dispatcher });
    }

    fn handle_arrival(&mut self, dispatcher: u32) {
        self.arrivals += 1;
        self.dispatcher_arrivals[dispatcher as usize] += 1;

        let (server, assignment) = match self.policy {
            AssignmentPolicy::Supermarket(d) => {
                (self.pick_least_loaded(d), Assignment::SupermarketChoice)
            }
            _ => {
                if self.iqueues[dispatcher as usize].is_empty() {
                    // Random fallback over all n servers; an enqueued server
                    // hit this way keeps its I-queue membership.
                    let s = self.rng.random_range(0..self.n as u32);
                    (s, Assignment::RandomFallback)
                } else {
                    (self.pop_server(dispatcher), Assignment::FromIQueue)
                }
            }
        };

        let now = self.time;
        let srv = &mut self.servers[server as usize];
        srv.job_count += 1;
        srv.jobs.push_back(PendingJob {
            arrival: now,
            assignment,
        });
        if srv.job_count == 1 {
            let dt = self.exp_service.sample(&mut self.rng);
            self.schedule(now + dt, EventKind::Completion { server });
        }
        self.schedule_arrival();
    }

    fn handle_completion(&mut self, server: u32) -> Result<(), SimError> {
        let now = self.time;
        let srv = &mut self.servers[server as usize];
        if srv.job_count == 0 {
            return Err(SimError::ConsistencyFault(format!(
                "completion event for idle server {server} at t = {now}"
            )));
        }
        srv.job_count -= 1;
        let job = srv.jobs.pop_front().expect("busy server has a job in service");
        self.completions += 1;
        let (w0, w1) = self.window;
        if now > w0 && now < w1 {
            self.acc.push(now - job.arrival, job.assignment);
        }
        if let Some(records) = &mut self.records {
            records.push(JobRecord {
                arrival: job.arrival,
                completion: now,
                server,
                assignment: job.assignment,
            });
        }
        let remaining = srv.job_count;
        if remaining >= 1 {
            let dt = self.exp_service.sample(&mut self.rng);
            self.schedule(now + dt, EventKind::Completion { server });
        }
        // Join rule: triggered by the job count falling to z or below, for
        // servers not already on an I-queue.
        if self.policy.is_jiq()
            && remaining <= self.z
            && self.servers[server as usize].enqueued_at.is_none()
        {
            let d = self.select_iqueue();
            self.iqueues[d as usize].push_back(server);
            self.servers[server as usize].enqueued_at = Some(d);
        }
        Ok(())
    }

    /// Removes the next server from a nonempty I-queue per the discipline.
    fn pop_server(&mut self, dispatcher: u32) -> u32 {
        let q = &mut self.iqueues[dispatcher as usize];
        let server = match self.discipline {
            IQueueDiscipline::Fcfs => q.pop_front(),
            // LCFS front-insertion + front-pop is equivalent to
            // back-insertion + back-pop on the join-ordered sequence.
            IQueueDiscipline::Lcfs => q.pop_back(),
        }
        .expect("pop_server called on an empty I-queue");
        self.servers[server as usize].enqueued_at = None;
        server
    }

    /// Picks the I-queue a qualifying server joins.
    fn select_iqueue(&mut self) -> u32 {
        match self.policy {
            AssignmentPolicy::JiqRandom => self.rng.random_range(0..self.m as u32),
            AssignmentPolicy::JiqSqd(d) => {
                // d independent probes (repeats allowed); shortest wins,
                // ties uniform among the distinct shortest.
                self.probe_buf.clear();
                for _ in 0..d {
                    let cand = self.rng.random_range(0..self.m as u32);
                    self.probe_buf.push(cand);
                }
                let mut best_len = usize::MAX;
                let mut chosen = 0u32;
                let mut tied = 0u32;
                for idx in 0..self.probe_buf.len() {
                    let cand = self.probe_buf[idx];
                    if self.probe_buf[..idx].contains(&cand) {
                        continue;
                    }
                    let len = self.iqueues[cand as usize].len();
                    if len < best_len {
                        best_len = len;
                        chosen = cand;
                        tied = 1;
                    } else if len == best_len {
                        tied += 1;
                        if self.rng.random_range(0..tied) == 0 {
                            chosen = cand;
                        }
                    }
                }
                chosen
            }
            AssignmentPolicy::Supermarket(_) => unreachable!("supermarket never joins I-queues"),
        }
    }

    /// Supermarket choice: least loaded of `d` distinct servers, ties uniform.
    fn pick_least_loaded(&mut self, d: u32) -> u32 {
        let d = (d as usize).min(self.n);
        self.probe_buf.clear();
        for _ in 0..d {
            loop {
                let cand = self.rng.random_range(0..self.n as u32);
                if !self.probe_buf.contains(&cand) {
                    self.probe_buf.push(cand);
                    break;
                }
            }
        }
        let mut best_load = u32::MAX;
        let mut chosen = 0u32;
        let mut tied = 0u32;
        for idx in 0..self.probe_buf.len() {
            let cand = self.probe_buf[idx];
            let load = self.servers[cand as usize].job_count;
            if load < best_load {
                best_load = load;
                chosen = cand;
                tied = 1;
            } else if load == best_load {
                tied += 1;
                if self.rng.random_range(0..tied) == 0 {
                    chosen = cand;
                }
            }
        }
        chosen
    }

    /// Structural invariants; intended for tests and debug sweeps.
    pub fn audit(&self) -> Result<(), SimError> {
        let mut enqueued_listed = 0u64;
        let mut seen = vec![false; self.n];
        for (d, q) in self.iqueues.iter().enumerate() {
            for &s in q {
                enqueued_listed += 1;
                if seen[s as usize] {
                    return Err(SimError::ConsistencyFault(format!(
                        "server {s} appears on more than one I-queue"
                    )));
                }
                seen[s as usize] = true;
                if self.servers[s as usize].enqueued_at != Some(d as u32) {
                    return Err(SimError::ConsistencyFault(format!(
                        "server {s} listed on I-queue {d} but enqueued_at = {:?}",
                        self.servers[s as usize].enqueued_at
                    )));
                }
            }
        }
        let enqueued_flagged = self
            .servers
            .iter()
            .filter(|s| s.enqueued_at.is_some())
            .count() as u64;
        if enqueued_listed != enqueued_flagged {
            return Err(SimError::ConsistencyFault(format!(
                "{enqueued_listed} servers listed on I-queues but {enqueued_flagged} flagged"
            )));
        }
        let in_system: u64 = self.servers.iter().map(|s| s.job_count as u64).sum();
        if self.arrivals != self.completions + in_system {
            return Err(SimError::ConsistencyFault(format!(
                "job conservation: {} arrivals != {} completions + {} in system",
                self.arrivals, self.completions, in_system
            )));
        }
        for (i, s) in self.servers.iter().enumerate() {
            if s.jobs.len() != s.job_count as usize {
                return Err(SimError::ConsistencyFault(format!(
                    "server {i}: job_count {} but {} pending records",
                    s.job_count,
                    s.jobs.len()
                )));
            }
        }
        Ok(())
    }
}

/// Stable per-trial seed derivation from a master seed.
pub fn derive_seed(master: u64, trial: u64) -> u64 {
    // splitmix64 on master xor a trial-indexed odd constant
    let mut x = master ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Runs one seeded trial to `horizon`, optionally keeping per-job records.
pub fn run_one_trial(
    cfg: &SystemConfig,
    seed: u64,
    warmup: f64,
    horizon: f64,
    record: bool,
) -> Result<(SimStats, Option<Vec<JobRecord>>), SimError> {
    let mut sim = Simulation::new(cfg, seed)?;
    sim.set_warmup(warmup);
    if record {
        sim.enable_recording();
    }
    let stats = sim.run(horizon)?;
    let records = sim.records.take();
    Ok((stats, records))
}

/// Aggregate over independent trials.
#[derive(Debug, Clone)]
pub struct TrialAggregate {
    /// Mean over trials of the per-trial mean time in system.
    pub mean_time: f64,
    /// Standard error of `mean_time` over trials (0 for a single trial).
    pub se_mean: f64,
    /// Mean over trials of the per-trial population variance.
    pub var_time: f64,
    pub se_var: f64,
    pub fraction_random: f64,
    /// Maximum end-of-run load over all trials.
    pub max_load: u32,
    pub per_trial: Vec<SimStats>,
}

/// Runs `trials` independent simulations concurrently with per-trial seeds
/// derived from `(seed, trial index)` and aggregates in trial order; the
/// result is deterministic for a fixed master seed.
pub fn run_trials(
    cfg: &SystemConfig,
    seed: u64,
    trials: u32,
    warmup: f64,
    horizon: f64,
) -> Result<TrialAggregate, SimError> {
    let per_trial: Vec<SimStats> = (0..trials)
        .into_par_iter()
        .map(|k| run_one_trial(cfg, derive_seed(seed, k as u64), warmup, horizon, false).map(|r| r.0))
        .collect::<Result<_, _>>()?;
    if per_trial.is_empty() {
        return Err(SimError::EmptyWindow);
    }
    let k = per_trial.len() as f64;
    let mean_time = per_trial.iter().map(|s| s.mean_time).sum::<f64>() / k;
    let var_time = per_trial.iter().map(|s| s.var_time).sum::<f64>() / k;
    let fraction_random = per_trial.iter().map(|s| s.fraction_random_assigned).sum::<f64>() / k;
    let spread = |vals: &dyn Fn(&SimStats) -> f64, center: f64| -> f64 {
        if per_trial.len() < 2 {
            return 0.0;
        }
        let ss: f64 = per_trial.iter().map(|s| (vals(s) - center).powi(2)).sum();
        (ss / (k - 1.0) / k).sqrt()
    };
    let se_mean = spread(&|s: &SimStats| s.mean_time, mean_time);
    let se_var = spread(&|s: &SimStats| s.var_time, var_time);
    let max_load = per_trial.iter().map(|s| s.max_load_at_end).max().unwrap();
    Ok(TrialAggregate {
        mean_time,
        se_mean,
        var_time,
        se_var,
        fraction_random,
        max_load,
        per_trial,
    })
}
