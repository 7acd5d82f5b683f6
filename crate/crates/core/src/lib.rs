//! Exact steady-state analysis of first-come-first-served queues serving two
//! classes of impatient customers.
//!
//! Two analytic models are covered:
//!
//! - **M/G/1+M** ([`mg1`]): one server, general service per class,
//!   exponential or hyper-exponential patience.
//! - **M/M/k+M** ([`mmk`]): k servers, exponential service and patience per
//!   class, including a scalar fast path when the service rates coincide.
//!
//! Both solvers expand the Laplace-Stieltjes transform of the virtual
//! queueing time into a lattice series evaluated at the patience rates;
//! [`measures`] turns the transforms into per-class and aggregate steady
//! state performance measures. A discrete-event simulator ([`sim`]) and a
//! single-class birth-death oracle ([`oracles`]) provide independent
//! validation paths.

mod dd;
pub mod error;
pub mod measures;
pub mod mg1;
pub mod mmk;
pub mod model;
pub mod oracles;
mod series;
pub mod sim;

pub use error::{Error, Result};
pub use measures::{measures_mg1, measures_mmk, ClassMeasures, PerformanceReport};
pub use mg1::{c_series, solve_mg1, Mg1Solution};
pub use mmk::{
    build_boundary, c_matrix_series, jump_matrices, solve_mmk, solve_mmk_equal_mu,
    BoundaryMatrices, MmkSolution,
};
pub use model::{
    equilibrium_factor, ClassParams, Mg1Config, MmkConfig, PatienceSpec, ServiceModel,
};
pub use oracles::{erlang_a, ErlangAMeasures, ErlangAParams};
pub use series::SeriesDiagnostics;
pub use sim::{simulate, SimConfig, SimEstimate};
