//! Discrete-event simulation of the two-class FCFS system with abandonment.
//!
//! Customers of both classes share one FCFS queue in front of `k` servers.
//! Each arrival draws a patience time; a waiting customer abandons once its
//! patience expires before service starts. Abandonment is implemented by
//! storing each queued customer's deadline and discarding expired customers
//! lazily when a server frees up, which follows the same stochastic law as
//! scheduling explicit abandonment events with fewer events to process.
//!
//! Replications are independent; each draws from six named random streams
//! (arrivals, service and patience, per class) derived deterministically
//! from the seed, so results are bit-reproducible and common random numbers
//! carry across scenario comparisons.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::measures::PerformanceReport;
use crate::model::{ClassParams, Mg1Config, MmkConfig, PatienceSpec, ServiceModel};

/// Simulation input: a system shape plus run controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of servers (1 reproduces the single-server model).
    pub servers: usize,
    pub class1: ClassParams,
    pub class2: ClassParams,
    /// Number of arrivals per replication.
    pub horizon: usize,
    /// Fraction of initial arrivals discarded from the statistics.
    pub warmup: f64,
    pub replications: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(servers: usize, class1: ClassParams, class2: ClassParams) -> Result<Self> {
        let config = SimConfig {
            servers,
            class1,
            class2,
            horizon: 1_000_000,
            warmup: 0.1,
            replications: 10,
            seed: 0x5eed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_run(mut self, horizon: usize, warmup: f64, replications: usize, seed: u64) -> Result<Self> {
        self.horizon = horizon;
        self.warmup = warmup;
        self.replications = replications;
        self.seed = seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.servers == 0 {
            return Err(Error::InvalidParameter("servers must be >= 1".into()));
        }
        self.class1.validate()?;
        self.class2.validate()?;
        if self.horizon < 1000 {
            return Err(Error::InvalidParameter(format!(
                "horizon must be at least 1000 arrivals, got {}",
                self.horizon
            )));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::InvalidParameter(format!(
                "warmup must lie in [0, 1), got {}",
                self.warmup
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_mg1(config: &Mg1Config) -> Self {
        SimConfig {
            servers: 1,
            class1: config.class1.clone(),
            class2: config.class2.clone(),
            horizon: 1_000_000,
            warmup: 0.1,
            replications: 10,
            seed: 0x5eed,
        }
    }

    pub fn from_mmk(config: &MmkConfig) -> Self {
        SimConfig {
            servers: config.servers,
            class1: config.class1.clone(),
            class2: config.class2.clone(),
            horizon: 1_000_000,
            warmup: 0.1,
            replications: 10,
            seed: 0x5eed,
        }
    }
}

/// Point estimates with 95% confidence half-widths, field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub mean: PerformanceReport,
    pub half_width: PerformanceReport,
    pub replications: usize,
}

impl SimEstimate {
    /// Does `value` fall inside the 95% interval of the given flat field?
    pub fn covers(&self, field_index: usize, value: f64) -> bool {
        let mean = self.mean.to_vec()[field_index];
        let hw = self.half_width.to_vec()[field_index];
        (value - mean).abs() <= hw
    }
}

// --------------------------------------------------------------------------
// Random streams
// --------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum Purpose {
    Arrival = 0,
    Service = 2,
    Patience = 4,
}

fn stream(seed: u64, replication: u64, purpose: Purpose, class: usize) -> ChaCha12Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&replication.to_le_bytes());
    bytes[16] = purpose as u8 + class as u8;
    bytes[17..25].copy_from_slice(b"renq-des");
    ChaCha12Rng::from_seed(bytes)
}

fn sample_service(model: &ServiceModel, rng: &mut ChaCha12Rng) -> f64 {
    match model {
        ServiceModel::Exponential { rate } => Exp::new(*rate).expect("validated").sample(rng),
        ServiceModel::Deterministic { duration } => *duration,
        ServiceModel::HyperExponential { weights, rates } => {
            let branch = pick_branch(weights, rng);
            Exp::new(rates[branch]).expect("validated").sample(rng)
        }
        ServiceModel::Erlang { phases, rate } => {
            let exp = Exp::new(*rate).expect("validated");
            (0..*phases).map(|_| exp.sample(rng)).sum()
        }
    }
}

fn sample_patience(spec: &PatienceSpec, rng: &mut ChaCha12Rng) -> f64 {
    match spec {
        PatienceSpec::Exponential { rate } => Exp::new(*rate).expect("validated").sample(rng),
        PatienceSpec::HyperExponential { weights, rates } => {
            let branch = pick_branch(weights, rng);
            Exp::new(rates[branch]).expect("validated").sample(rng)
        }
    }
}

fn pick_branch(weights: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

// --------------------------------------------------------------------------
// One replication
// --------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct InService {
    completion: f64,
    start: f64,
    class: usize,
}

impl PartialEq for InService {
    fn eq(&self, other: &Self) -> bool {
        self.completion == other.completion
    }
}
impl Eq for InService {}
impl PartialOrd for InService {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for InService {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap pops the earliest completion first.
        other
            .completion
            .partial_cmp(&self.completion)
            .expect("finite times")
    }
}

#[derive(Debug, Clone, Copy)]
struct Waiting {
    class: usize,
    arrival: f64,
    deadline: f64,
    index: usize,
}

/// Per-arrival trace record for the virtual-wait consistency check.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TraceRecord {
    pub arrival: f64,
    /// Wait of a customer that entered service; `None` for abandoners.
    pub wait: Option<f64>,
    /// Jump of the virtual-wait process caused by this arrival (zero when
    /// the system is left with idle servers).
    pub jump: f64,
}

/// Raw per-replication tallies.
#[derive(Debug, Clone, Default)]
pub(crate) struct Tally {
    pub arrivals: [usize; 2],
    pub served: [usize; 2],
    pub reneged: [usize; 2],
    pub wait_served_sum: [f64; 2],
    pub wait_reneged_sum: [f64; 2],
    pub service_time_sum: [f64; 2],
    /// Time-integral of the per-class queue length over the window.
    pub queue_area: [f64; 2],
    /// Time-integral of the per-class in-service count over the window.
    pub service_area: [f64; 2],
    /// Time-integral of the busy-server count over the window.
    pub busy_area: f64,
    pub window: f64,
}

impl Tally {
    fn report(&self, servers: f64) -> PerformanceReport {
        let mut flat = [0.0f64; 25];
        let f = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        let window = self.window;
        let mut throughput_total = 0.0;
        let mut renege_total = 0.0;
        let mut arrivals_total = 0.0;
        let mut wait_all = 0.0;
        let mut wait_served_all = 0.0;
        let mut service_time_all = 0.0;

        for class in 0..2 {
            let offset = class * 8;
            let arrivals = self.arrivals[class] as f64;
            let served = self.served[class] as f64;
            let reneged = self.reneged[class] as f64;
            let wait_sum = self.wait_served_sum[class] + self.wait_reneged_sum[class];
            flat[offset] = f(served, arrivals); // p_serve
            flat[offset + 1] = f(wait_sum, arrivals); // awt
            flat[offset + 2] = f(self.wait_served_sum[class], served);
            flat[offset + 3] = f(self.wait_reneged_sum[class], reneged);
            flat[offset + 4] = f(self.queue_area[class], window); // lq
            flat[offset + 5] = f(self.queue_area[class] + self.service_area[class], window);
            flat[offset + 6] = f(served, window); // throughput
            flat[offset + 7] = f(reneged, window);
            throughput_total += served;
            renege_total += reneged;
            arrivals_total += arrivals;
            wait_all += wait_sum;
            wait_served_all += self.wait_served_sum[class];
            service_time_all += self.service_time_sum[class];
        }

        flat[16] = f(self.busy_area, window * servers); // utilization
        flat[17] = f(throughput_total, window);
        flat[18] = f(renege_total, window);
        flat[19] = f(throughput_total, arrivals_total);
        flat[20] = f(wait_all, arrivals_total);
        flat[21] = f(wait_served_all, throughput_total);
        flat[22] = f(wait_all - wait_served_all, renege_total);
        flat[23] = f(service_time_all, throughput_total);
        flat[24] = f(self.served[1] as f64, throughput_total);
        PerformanceReport::from_vec(&flat)
    }
}

pub(crate) struct ReplicationOutput {
    pub tally: Tally,
    pub trace: Option<Vec<TraceRecord>>,
}

pub(crate) fn run_replication(
    config: &SimConfig,
    replication: u64,
    want_trace: bool,
) -> ReplicationOutput {
    let classes = [&config.class1, &config.class2];
    let lambda = [classes[0].arrival_rate, classes[1].arrival_rate];
    let k = config.servers;
    let horizon = config.horizon;
    let warmup_cut = ((config.warmup * horizon as f64).floor() as usize).min(horizon);

    let mut arrival_rng = [
        stream(config.seed, replication, Purpose::Arrival, 0),
        stream(config.seed, replication, Purpose::Arrival, 1),
    ];
    let mut service_rng = [
        stream(config.seed, replication, Purpose::Service, 0),
        stream(config.seed, replication, Purpose::Service, 1),
    ];
    let mut patience_rng = [
        stream(config.seed, replication, Purpose::Patience, 0),
        stream(config.seed, replication, Purpose::Patience, 1),
    ];

    let mut tally = Tally::default();
    let mut trace: Vec<TraceRecord> = Vec::new();
    if lambda[0] + lambda[1] == 0.0 {
        return ReplicationOutput { tally, trace: want_trace.then_some(trace) };
    }

    let arrival_draw = |class: usize, rng: &mut [ChaCha12Rng; 2]| -> f64 {
        Exp::new(lambda[class]).expect("positive rate").sample(&mut rng[class])
    };

    let mut next_arrival = [f64::INFINITY; 2];
    for class in 0..2 {
        if lambda[class] > 0.0 {
            next_arrival[class] = arrival_draw(class, &mut arrival_rng);
        }
    }

    let mut servers: BinaryHeap<InService> = BinaryHeap::with_capacity(k);
    let mut queue: VecDeque<Waiting> = VecDeque::new();
    let mut generated = 0usize;
    let mut now;
    let mut last_event = 0.0f64;
    // Measurement window [t0, t1]: from the first counted arrival to the
    // last arrival; contributions are clipped to it.
    let mut t0: Option<f64> = if warmup_cut == 0 { Some(0.0) } else { None };
    let mut t1: Option<f64> = None;

    let clip = |start: f64, end: f64, t0: Option<f64>, t1: Option<f64>| -> f64 {
        let Some(t0) = t0 else { return 0.0 };
        let lo = start.max(t0);
        let hi = match t1 {
            Some(t1) => end.min(t1),
            None => end,
        };
        (hi - lo).max(0.0)
    };

    // Resolve a waiting or immediately-served customer.
    let resolve_served = |w: &Waiting,
                              start: f64,
                              service: f64,
                              tally: &mut Tally,
                              t0: Option<f64>,
                              t1: Option<f64>| {
        let wait = start - w.arrival;
        tally.queue_area[w.class] += clip(w.arrival, start, t0, t1);
        if w.index >= warmup_cut {
            tally.served[w.class] += 1;
            tally.wait_served_sum[w.class] += wait;
            tally.service_time_sum[w.class] += service;
        }
    };
    let resolve_reneged =
        |w: &Waiting, tally: &mut Tally, t0: Option<f64>, t1: Option<f64>| {
            tally.queue_area[w.class] += clip(w.arrival, w.deadline, t0, t1);
            if w.index >= warmup_cut {
                tally.reneged[w.class] += 1;
                tally.wait_reneged_sum[w.class] += w.deadline - w.arrival;
            }
        };

    loop {
        let next_completion = servers.peek().map_or(f64::INFINITY, |s| s.completion);
        let next_arrival_time = if generated < horizon {
            next_arrival[0].min(next_arrival[1])
        } else {
            f64::INFINITY
        };
        if next_completion == f64::INFINITY && next_arrival_time == f64::INFINITY {
            break;
        }

        // Completions processed first on ties (continuous distributions make
        // exact ties a measure-zero event; the rule just pins determinism).
        if next_completion <= next_arrival_time {
            now = next_completion;
            tally.busy_area += servers.len() as f64 * clip(last_event, now, t0, t1);
            last_event = now;
            let done = servers.pop().expect("completion implies busy server");
            tally.service_area[done.class] += clip(done.start, done.completion, t0, t1);

            // Pull the next unexpired customer, discarding abandoners.
            while let Some(front) = queue.front().copied() {
                if front.deadline <= now {
                    resolve_reneged(&front, &mut tally, t0, t1);
                    if want_trace {
                        trace[front.index].wait = None;
                    }
                    queue.pop_front();
                    continue;
                }
                let service = sample_service(&classes[front.class].service, &mut service_rng[front.class]);
                servers.push(InService { completion: now + service, start: now, class: front.class });
                resolve_served(&front, now, service, &mut tally, t0, t1);
                if want_trace {
                    trace[front.index].wait = Some(now - front.arrival);
                    trace[front.index].jump = if servers.len() == k {
                        servers.peek().expect("nonempty").completion - now
                    } else {
                        0.0
                    };
                }
                queue.pop_front();
                break;
            }
            continue;
        }

        // Arrival event.
        now = next_arrival_time;
        tally.busy_area += servers.len() as f64 * clip(last_event, now, t0, t1);
        last_event = now;
        let class = if next_arrival[0] <= next_arrival[1] { 0 } else { 1 };
        let index = generated;
        generated += 1;
        next_arrival[class] = now + arrival_draw(class, &mut arrival_rng);
        if index == warmup_cut {
            t0 = Some(now);
        }
        if index + 1 == horizon {
            t1 = Some(now);
        }
        if index >= warmup_cut {
            tally.arrivals[class] += 1;
        }
        if want_trace {
            trace.push(TraceRecord { arrival: now, wait: None, jump: 0.0 });
        }

        let patience = sample_patience(&classes[class].patience, &mut patience_rng[class]);
        if servers.len() < k {
            let service = sample_service(&classes[class].service, &mut service_rng[class]);
            servers.push(InService { completion: now + service, start: now, class });
            let w = Waiting { class, arrival: now, deadline: now + patience, index };
            resolve_served(&w, now, service, &mut tally, t0, t1);
            if want_trace {
                trace[index].wait = Some(0.0);
                trace[index].jump = if servers.len() == k {
                    servers.peek().expect("nonempty").completion - now
                } else {
                    0.0
                };
            }
        } else {
            queue.push_back(Waiting { class, arrival: now, deadline: now + patience, index });
        }
    }

    // Anyone still queued never resolved because no completions remain; with
    // lazy discarding that cannot happen (the queue drains with the servers),
    // but flush defensively so the count identity stays exact.
    while let Some(front) = queue.pop_front() {
        resolve_reneged(&front, &mut tally, t0, t1);
    }

    tally.window = match (t0, t1) {
        (Some(a), Some(b)) if b > a => b - a,
        _ => 0.0,
    };
    ReplicationOutput { tally, trace: want_trace.then_some(trace) }
}

// --------------------------------------------------------------------------
// Replication aggregation
// --------------------------------------------------------------------------

fn student_t_half_width(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return 0.0;
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid dof")
        .inverse_cdf(0.975);
    t * (var / n as f64).sqrt()
}

/// Run the configured number of replications and aggregate Student-t
/// confidence intervals field by field.
pub fn simulate(config: &SimConfig) -> Result<SimEstimate> {
    config.validate()?;
    let reports: Vec<PerformanceReport> = (0..config.replications as u64)
        .into_par_iter()
        .map(|rep| run_replication(config, rep, false).tally.report(config.servers as f64))
        .collect();

    let n = reports.len();
    let width = PerformanceReport::FIELDS.len();
    let mut means = vec![0.0f64; width];
    let mut half_widths = vec![0.0f64; width];
    let flattened: Vec<Vec<f64>> = reports.iter().map(|r| r.to_vec()).collect();
    for field in 0..width {
        let samples: Vec<f64> = flattened.iter().map(|row| row[field]).collect();
        means[field] = samples.iter().sum::<f64>() / n as f64;
        half_widths[field] = student_t_half_width(&samples);
    }

    Ok(SimEstimate {
        mean: PerformanceReport::from_vec(&means),
        half_width: PerformanceReport::from_vec(&half_widths),
        replications: n,
    })
}
