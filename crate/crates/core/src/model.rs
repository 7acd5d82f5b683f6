//! Domain parameter types shared by the solvers and the simulator.
//!
//! A [`ServiceModel`] is a service-time distribution that knows its mean and
//! its Laplace-Stieltjes transform in closed form; a [`PatienceSpec`] is an
//! exponential or hyper-exponential patience-time distribution. Classes pair
//! an arrival rate with one of each, and the two config types bundle a pair
//! of classes with solver controls.
//!
//! All rates and durations are expressed in one caller-chosen time unit.
//! Every type here is immutable after construction and every operation is a
//! pure function, so values can be shared freely across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight vectors must sum to one within this slack.
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Below `s * mean < SMALL_S_FACTOR` the equilibrium factor switches to its
/// analytic limit to dodge the `1 - lst(s)` cancellation.
const SMALL_S_FACTOR: f64 = 1e-8;

fn check_positive(value: f64, what: &str) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "{what} must be strictly positive and finite, got {value}"
        )));
    }
    Ok(())
}

fn check_weights(weights: &[f64], rates: &[f64], what: &str) -> Result<()> {
    if weights.is_empty() || weights.len() != rates.len() {
        return Err(Error::InvalidParameter(format!(
            "{what}: weights and rates must be non-empty and of equal length"
        )));
    }
    let mut total = 0.0;
    for &w in weights {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{what}: weights must be nonnegative, got {w}"
            )));
        }
        total += w;
    }
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidParameter(format!(
            "{what}: weights must sum to 1 within {WEIGHT_SUM_TOL}, got {total}"
        )));
    }
    for &r in rates {
        check_positive(r, &format!("{what} rate"))?;
    }
    Ok(())
}

/// Service-time distribution with a closed-form LST.
///
/// Only variants with closed-form transforms are supported; arbitrary
/// empirical distributions are a simulator concern, not an analytic one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceModel {
    /// Exponential with the given rate (mean `1/rate`).
    Exponential { rate: f64 },
    /// Constant service time.
    Deterministic { duration: f64 },
    /// Mixture of exponentials: branch `i` chosen with `weights[i]`, then
    /// an exponential with `rates[i]`.
    HyperExponential { weights: Vec<f64>, rates: Vec<f64> },
    /// Sum of `phases` iid exponentials with the given rate.
    Erlang { phases: u32, rate: f64 },
}

impl ServiceModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            ServiceModel::Exponential { rate } => check_positive(*rate, "exponential service rate"),
            ServiceModel::Deterministic { duration } => {
                check_positive(*duration, "deterministic service duration")
            }
            ServiceModel::HyperExponential { weights, rates } => {
                check_weights(weights, rates, "hyper-exponential service")
            }
            ServiceModel::Erlang { phases, rate } => {
                if *phases == 0 {
                    return Err(Error::InvalidParameter(
                        "erlang service needs at least one phase".into(),
                    ));
                }
                check_positive(*rate, "erlang service rate")
            }
        }
    }

    /// Mean service time.
    pub fn mean(&self) -> f64 {
        match self {
            ServiceModel::Exponential { rate } => 1.0 / rate,
            ServiceModel::Deterministic { duration } => *duration,
            ServiceModel::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| w / r)
                .sum(),
            ServiceModel::Erlang { phases, rate } => f64::from(*phases) / rate,
        }
    }

    /// `E[e^{-sX}]` for `s >= 0`.
    pub fn lst(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lst requires s >= 0, got {s}"
            )));
        }
        Ok(self.lst_raw(s))
    }

    /// `d/ds E[e^{-sX}]` for `s >= 0`; equals `-mean()` at `s = 0`.
    pub fn lst_derivative(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lst_derivative requires s >= 0, got {s}"
            )));
        }
        Ok(self.lst_derivative_raw(s))
    }

    pub(crate) fn lst_raw(&self, s: f64) -> f64 {
        match self {
            ServiceModel::Exponential { rate } => rate / (rate + s),
            ServiceModel::Deterministic { duration } => (-s * duration).exp(),
            ServiceModel::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| w * r / (r + s))
                .sum(),
            ServiceModel::Erlang { phases, rate } => {
                (rate / (rate + s)).powi(*phases as i32)
            }
        }
    }

    pub(crate) fn lst_derivative_raw(&self, s: f64) -> f64 {
        match self {
            ServiceModel::Exponential { rate } => -rate / ((rate + s) * (rate + s)),
            ServiceModel::Deterministic { duration } => -duration * (-s * duration).exp(),
            ServiceModel::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| -w * r / ((r + s) * (r + s)))
                .sum(),
            ServiceModel::Erlang { phases, rate } => {
                let n = f64::from(*phases);
                -n * (rate / (rate + s)).powi(*phases as i32) / (rate + s)
            }
        }
    }
}

/// Patience-time distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PatienceSpec {
    /// Exponential patience with the given rate (mean `1/rate`).
    Exponential { rate: f64 },
    /// Mixture of exponential patience branches.
    HyperExponential { weights: Vec<f64>, rates: Vec<f64> },
}

impl PatienceSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PatienceSpec::Exponential { rate } => check_positive(*rate, "patience rate"),
            PatienceSpec::HyperExponential { weights, rates } => {
                check_weights(weights, rates, "hyper-exponential patience")
            }
        }
    }

    /// Mean patience time.
    pub fn mean(&self) -> f64 {
        match self {
            PatienceSpec::Exponential { rate } => 1.0 / rate,
            PatienceSpec::HyperExponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| w / r).sum()
            }
        }
    }

    /// `(weight, rate)` pairs; a plain exponential is a single branch of
    /// weight one.
    pub fn branches(&self) -> Vec<(f64, f64)> {
        match self {
            PatienceSpec::Exponential { rate } => vec![(1.0, *rate)],
            PatienceSpec::HyperExponential { weights, rates } => {
                weights.iter().copied().zip(rates.iter().copied()).collect()
            }
        }
    }

    /// The single rate of an exponential patience, if that is what this is.
    pub fn exponential_rate(&self) -> Option<f64> {
        match self {
            PatienceSpec::Exponential { rate } => Some(*rate),
            PatienceSpec::HyperExponential { .. } => None,
        }
    }
}

/// One customer class: Poisson arrivals, a service distribution and a
/// patience distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassParams {
    pub arrival_rate: f64,
    pub service: ServiceModel,
    pub patience: PatienceSpec,
}

impl ClassParams {
    pub fn new(arrival_rate: f64, service: ServiceModel, patience: PatienceSpec) -> Result<Self> {
        let params = ClassParams { arrival_rate, service, patience };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_rate >= 0.0) || !self.arrival_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "arrival rate must be nonnegative and finite, got {}",
                self.arrival_rate
            )));
        }
        self.service.validate()?;
        self.patience.validate()
    }

    /// Mean service time of the class.
    pub fn mean_service(&self) -> f64 {
        self.service.mean()
    }
}

/// `lambda_i (1 - lst(s)) / s`: the arrival-weighted LST of the stationary
/// excess of the class service time. Requires `s > 0`; the `s -> 0` limit
/// `lambda_i * tau_i` is taken explicitly when `s` is negligible against the
/// service time scale.
pub fn equilibrium_factor(class: &ClassParams, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "equilibrium_factor requires s > 0, got {s}"
        )));
    }
    Ok(equilibrium_factor_raw(class, s))
}

pub(crate) fn equilibrium_factor_raw(class: &ClassParams, s: f64) -> f64 {
    let mean = class.service.mean();
    if s * mean < SMALL_S_FACTOR {
        return class.arrival_rate * mean;
    }
    class.arrival_rate * (1.0 - class.service.lst_raw(s)) / s
}

/// Derivative of [`equilibrium_factor`] with respect to `s`, for `s > 0`.
pub(crate) fn equilibrium_factor_derivative_raw(class: &ClassParams, s: f64) -> f64 {
    let mean = class.service.mean();
    if s * mean < SMALL_S_FACTOR {
        // H(s) = lambda (tau - m2 s / 2 + ...); the linear coefficient needs
        // the second moment, which only matters below the branch point where
        // the closed form would cancel catastrophically anyway.
        return class.arrival_rate
            * (class.service.lst_derivative_raw(s) * s - (class.service.lst_raw(s) - 1.0))
            / s.max(SMALL_S_FACTOR / mean).powi(2);
    }
    let g = class.service.lst_raw(s);
    let gp = class.service.lst_derivative_raw(s);
    class.arrival_rate * (-gp * s - (1.0 - g)) / (s * s)
}

/// Default relative truncation tolerance for the series solvers.
pub const DEFAULT_TOLERANCE: f64 = 1e-12;
/// Default cap on the anti-diagonal index `i + j`.
pub const DEFAULT_MAX_DIAGONAL: usize = 10_000;

fn check_solver_controls(tolerance: f64, max_diagonal: usize) -> Result<()> {
    if !(tolerance > 0.0) || !tolerance.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be strictly positive, got {tolerance}"
        )));
    }
    if max_diagonal == 0 || max_diagonal > 60_000 {
        return Err(Error::InvalidParameter(format!(
            "max_diagonal must be in 1..=60000, got {max_diagonal}"
        )));
    }
    Ok(())
}

/// Configuration of the single-server M/G/1+M system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mg1Config {
    pub class1: ClassParams,
    pub class2: ClassParams,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_diagonal")]
    pub max_diagonal: usize,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_max_diagonal() -> usize {
    DEFAULT_MAX_DIAGONAL
}

impl Mg1Config {
    pub fn new(class1: ClassParams, class2: ClassParams) -> Result<Self> {
        let config = Mg1Config {
            class1,
            class2,
            tolerance: DEFAULT_TOLERANCE,
            max_diagonal: DEFAULT_MAX_DIAGONAL,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_controls(mut self, tolerance: f64, max_diagonal: usize) -> Result<Self> {
        self.tolerance = tolerance;
        self.max_diagonal = max_diagonal;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.class1.validate()?;
        self.class2.validate()?;
        check_solver_controls(self.tolerance, self.max_diagonal)
    }

    pub fn classes(&self) -> [&ClassParams; 2] {
        [&self.class1, &self.class2]
    }

    pub fn total_arrival_rate(&self) -> f64 {
        self.class1.arrival_rate + self.class2.arrival_rate
    }
}

/// Configuration of the k-server M/M/k+M system. Service and patience must
/// both be exponential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmkConfig {
    pub servers: usize,
    pub class1: ClassParams,
    pub class2: ClassParams,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_diagonal")]
    pub max_diagonal: usize,
}

impl MmkConfig {
    pub fn new(servers: usize, class1: ClassParams, class2: ClassParams) -> Result<Self> {
        let config = MmkConfig {
            servers,
            class1,
            class2,
            tolerance: DEFAULT_TOLERANCE,
            max_diagonal: DEFAULT_MAX_DIAGONAL,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_controls(mut self, tolerance: f64, max_diagonal: usize) -> Result<Self> {
        self.tolerance = tolerance;
        self.max_diagonal = max_diagonal;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.servers == 0 {
            return Err(Error::InvalidParameter("servers must be at least 1".into()));
        }
        self.class1.validate()?;
        self.class2.validate()?;
        for (index, class) in [(1, &self.class1), (2, &self.class2)] {
            if !matches!(class.service, ServiceModel::Exponential { .. }) {
                return Err(Error::InvalidParameter(format!(
                    "class {index}: the multi-server model requires exponential service"
                )));
            }
            if class.patience.exponential_rate().is_none() {
                return Err(Error::InvalidParameter(format!(
                    "class {index}: the multi-server model requires exponential patience"
                )));
            }
        }
        check_solver_controls(self.tolerance, self.max_diagonal)
    }

    pub fn classes(&self) -> [&ClassParams; 2] {
        [&self.class1, &self.class2]
    }

    /// Service rates `(mu_1, mu_2)`.
    pub fn service_rates(&self) -> (f64, f64) {
        let rate = |class: &ClassParams| match class.service {
            ServiceModel::Exponential { rate } => rate,
            _ => unreachable!("validated exponential service"),
        };
        (rate(&self.class1), rate(&self.class2))
    }

    /// Patience rates `(theta_1, theta_2)`.
    pub fn patience_rates(&self) -> (f64, f64) {
        (
            self.class1.patience.exponential_rate().expect("validated"),
            self.class2.patience.exponential_rate().expect("validated"),
        )
    }

    pub fn total_arrival_rate(&self) -> f64 {
        self.class1.arrival_rate + self.class2.arrival_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn exp_class(arrival: f64, rate: f64, theta: f64) -> ClassParams {
        ClassParams::new(
            arrival,
            ServiceModel::Exponential { rate },
            PatienceSpec::Exponential { rate: theta },
        )
        .unwrap()
    }

    fn all_variants() -> Vec<ServiceModel> {
        vec![
            ServiceModel::Exponential { rate: 1.3 },
            ServiceModel::Deterministic { duration: 0.7 },
            ServiceModel::HyperExponential {
                weights: vec![0.3, 0.7],
                rates: vec![0.5, 2.5],
            },
            ServiceModel::Erlang { phases: 4, rate: 3.0 },
        ]
    }

    #[test]
    fn lst_closed_forms() {
        let exp = ServiceModel::Exponential { rate: 1.0 };
        assert_relative_eq!(exp.lst(1.0).unwrap(), 0.5, max_relative = 1e-15);
        let det = ServiceModel::Deterministic { duration: 1.0 };
        assert_relative_eq!(det.lst(1.0).unwrap(), (-1.0f64).exp(), max_relative = 1e-15);
        for model in all_variants() {
            assert_relative_eq!(model.lst(0.0).unwrap(), 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn lst_derivative_closed_forms() {
        let exp1 = ServiceModel::Exponential { rate: 1.0 };
        assert_relative_eq!(exp1.lst_derivative(0.0).unwrap(), -1.0, max_relative = 1e-15);
        let exp2 = ServiceModel::Exponential { rate: 2.0 };
        assert_relative_eq!(exp2.lst_derivative(2.0).unwrap(), -0.125, max_relative = 1e-15);
        let det = ServiceModel::Deterministic { duration: 1.0 };
        assert_relative_eq!(
            det.lst_derivative(1.0).unwrap(),
            -(-1.0f64).exp(),
            max_relative = 1e-15
        );
        for model in all_variants() {
            assert_relative_eq!(
                model.lst_derivative(0.0).unwrap(),
                -model.mean(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn lst_rejects_negative_s() {
        let model = ServiceModel::Exponential { rate: 1.0 };
        assert!(model.lst(-0.1).is_err());
        assert!(model.lst_derivative(-0.1).is_err());
    }

    #[test]
    fn lst_derivative_matches_finite_differences() {
        for model in all_variants() {
            for &s in &[0.1f64, 1.0, 10.0] {
                let h = 1e-6 * s.max(1.0);
                let fd = (model.lst(s + h).unwrap() - model.lst(s - h).unwrap()) / (2.0 * h);
                let exact = model.lst_derivative(s).unwrap();
                assert_relative_eq!(exact, fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn lst_is_strictly_decreasing() {
        let grid = [0.0, 0.05, 0.3, 1.0, 4.0, 20.0];
        for model in all_variants() {
            for pair in grid.windows(2) {
                let a = model.lst(pair[0]).unwrap();
                let b = model.lst(pair[1]).unwrap();
                assert!(a > b, "{model:?}: lst({}) = {a} !> lst({}) = {b}", pair[0], pair[1]);
                assert!(b > 0.0 && b <= 1.0);
            }
            for &s in &grid {
                assert!(model.lst_derivative(s).unwrap() < 0.0);
            }
        }
    }

    #[test]
    fn equilibrium_factor_examples() {
        let c1 = exp_class(1.0, 1.0, 1.0);
        assert_relative_eq!(equilibrium_factor(&c1, 1.0).unwrap(), 0.5, max_relative = 1e-15);

        let c2 = ClassParams::new(
            2.0,
            ServiceModel::Deterministic { duration: 1.0 },
            PatienceSpec::Exponential { rate: 2.0 },
        )
        .unwrap();
        assert_relative_eq!(
            equilibrium_factor(&c2, 1.0).unwrap(),
            2.0 * (1.0 - (-1.0f64).exp()),
            max_relative = 1e-15
        );

        // Explicit limit branch: s far below the service time scale.
        assert_relative_eq!(
            equilibrium_factor(&c1, 1e-12).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        assert!(equilibrium_factor(&c1, 0.0).is_err());
        assert!(equilibrium_factor(&c1, -1.0).is_err());
    }

    #[test]
    fn weight_validation() {
        let bad = ServiceModel::HyperExponential {
            weights: vec![0.5, 0.6],
            rates: vec![1.0, 2.0],
        };
        assert!(bad.validate().is_err());
        let negative = PatienceSpec::HyperExponential {
            weights: vec![-0.1, 1.1],
            rates: vec![1.0, 2.0],
        };
        assert!(negative.validate().is_err());
        let zero_rate = ServiceModel::Exponential { rate: 0.0 };
        assert!(zero_rate.validate().is_err());
        assert!(ServiceModel::Erlang { phases: 0, rate: 1.0 }.validate().is_err());
    }

    #[test]
    fn mmk_config_requires_exponential() {
        let det = ClassParams::new(
            1.0,
            ServiceModel::Deterministic { duration: 1.0 },
            PatienceSpec::Exponential { rate: 1.0 },
        )
        .unwrap();
        let exp = exp_class(1.0, 1.0, 1.0);
        assert!(MmkConfig::new(2, det, exp).is_err());
    }

    proptest! {
        #[test]
        fn equilibrium_identity_holds(
            lambda in 0.01f64..50.0,
            rate in 0.05f64..20.0,
            s in 0.001f64..50.0,
        ) {
            // equilibrium_factor(s) * s / lambda + lst(s) = 1 exactly, as long
            // as the limit branch is not taken.
            let class = exp_class(lambda, rate, 1.0);
            prop_assume!(s / rate >= 1e-7);
            let h = equilibrium_factor(&class, s).unwrap();
            let identity = h * s / lambda + class.service.lst(s).unwrap();
            prop_assert!((identity - 1.0).abs() < 1e-14);
        }

        #[test]
        fn lst_monotone_for_random_models(
            rate in 0.05f64..20.0,
            s1 in 0.0f64..30.0,
            delta in 0.01f64..30.0,
            phases in 1u32..8,
        ) {
            let models = [
                ServiceModel::Exponential { rate },
                ServiceModel::Deterministic { duration: 1.0 / rate },
                ServiceModel::Erlang { phases, rate },
            ];
            for model in models {
                let a = model.lst(s1).unwrap();
                let b = model.lst(s1 + delta).unwrap();
                prop_assert!(a > b);
                prop_assert!(model.lst_derivative(s1).unwrap() < 0.0);
            }
        }
    }
}
