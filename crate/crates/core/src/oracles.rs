//! Independent ground-truth computations used in tests and validation.
//!
//! The single-class M/M/k+M queue (Erlang-A) has a plain birth-death
//! structure, so its stationary distribution follows from a truncated
//! forward recursion. The two-class solvers must reduce to these numbers
//! whenever one class has zero arrivals.

use crate::error::{Error, Result};

/// Parameters of a single-class M/M/k+M queue.
#[derive(Debug, Clone, Copy)]
pub struct ErlangAParams {
    pub arrival_rate: f64,
    pub service_rate: f64,
    pub patience_rate: f64,
    pub servers: usize,
    /// Initial cap on the queue length; doubled automatically until the
    /// geometric tail mass drops below `1e-12` of the total.
    pub truncation: usize,
}

impl ErlangAParams {
    pub fn new(arrival_rate: f64, service_rate: f64, patience_rate: f64, servers: usize) -> Self {
        ErlangAParams {
            arrival_rate,
            service_rate,
            patience_rate,
            servers,
            truncation: 100_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.arrival_rate >= 0.0) {
            return Err(Error::InvalidParameter("arrival rate must be >= 0".into()));
        }
        if !(self.service_rate > 0.0) || !(self.patience_rate > 0.0) {
            return Err(Error::InvalidParameter("rates must be > 0".into()));
        }
        if self.servers == 0 {
            return Err(Error::InvalidParameter("servers must be >= 1".into()));
        }
        Ok(())
    }
}

/// Steady-state measures of the Erlang-A queue.
#[derive(Debug, Clone, Copy)]
pub struct ErlangAMeasures {
    /// Probability an arriving customer is eventually served.
    pub p_serve: f64,
    /// Expected time spent waiting, `E[min(W, T)]`.
    pub awt: f64,
    /// Expected queue length.
    pub lq: f64,
    /// Expected fraction of busy servers.
    pub utilization: f64,
}

const TAIL_MASS: f64 = 1e-12;
const HARD_CEILING: usize = 1 << 30;

/// Solve the birth-death chain with birth rate `lambda` and death rate
/// `min(n, k) mu + max(n - k, 0) theta` by forward recursion in ratio form.
pub fn erlang_a(params: &ErlangAParams) -> Result<ErlangAMeasures> {
    params.validate()?;
    let lambda = params.arrival_rate;
    let mu = params.service_rate;
    let theta = params.patience_rate;
    let k = params.servers;

    if lambda == 0.0 {
        return Ok(ErlangAMeasures { p_serve: 1.0, awt: 0.0, lq: 0.0, utilization: 0.0 });
    }

    // Unnormalized weights, accumulated with periodic rescaling so that
    // rho^n / n! style terms never overflow.
    let mut term = 1.0f64;
    let mut total = 1.0f64;
    let mut queue_mass = 0.0f64; // sum (n-k)+ term
    let mut busy_mass = 0.0f64; // sum min(n,k) term
    let mut cap = params.truncation.max(k + 1);

    let mut n = 0usize;
    loop {
        let death = mu * (n + 1).min(k) as f64 + theta * ((n + 1).saturating_sub(k)) as f64;
        term *= lambda / death;
        n += 1;
        total += term;
        queue_mass += term * (n.saturating_sub(k)) as f64;
        busy_mass += term * n.min(k) as f64;

        if n > k {
            let ratio = lambda / (mu * k as f64 + theta * (n + 1 - k) as f64);
            if ratio < 1.0 && term * ratio / (1.0 - ratio) < TAIL_MASS * total {
                break;
            }
        }
        if n >= cap {
            if cap >= HARD_CEILING {
                return Err(Error::NonConvergence {
                    max_diagonal: cap,
                    last_ratio: term / total,
                });
            }
            cap *= 2;
        }
        if total > 1e250 {
            let scale = 1e-250;
            term *= scale;
            total *= scale;
            queue_mass *= scale;
            busy_mass *= scale;
        }
    }

    let lq = queue_mass / total;
    let busy = busy_mass / total;
    let p_abandon = theta * lq / lambda;
    Ok(ErlangAMeasures {
        p_serve: 1.0 - p_abandon,
        awt: lq / lambda,
        lq,
        utilization: busy / k as f64,
    })
}
