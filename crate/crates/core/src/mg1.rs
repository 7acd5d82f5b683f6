//! The two-class single-server system with exponential (or hyper-exponential)
//! patience and general service.
//!
//! The steady-state LST of the virtual queueing time satisfies the fixed
//! point `psi(s) = p0 + sum_b w_b psi(s + theta_b) H_b(s)` where the sum runs
//! over every patience branch of both classes and `H_b` is the equilibrium
//! factor of the branch's class. Repeated substitution turns the fixed point
//! into a lattice series `psi(s) = p0 * c(s)` whose terms obey a two-or-more
//! direction recursion; `p0` follows from `psi(0) = 1`.
//!
//! Everything the performance measures need is `psi` and `psi'` at the
//! patience branch rates, so the solver evaluates the series exactly there.
//! The series values can dwarf `f64::MAX` in deep overload; they are kept in
//! scaled form and only ever combined through ratios.

use crate::error::{Error, Result};
use crate::model::{
    equilibrium_factor_derivative_raw, equilibrium_factor_raw, ClassParams, Mg1Config,
};
use crate::series::{scalar_series, ScalarBranch, ScalarSeries, SeriesControls};

/// `psi` and `psi'` evaluated at one patience branch rate.
#[derive(Debug, Clone, Copy)]
pub struct BranchEval {
    /// Branch mixing weight (1 for plain exponential patience).
    pub weight: f64,
    /// Branch patience rate.
    pub rate: f64,
    /// `psi(rate)`, in `(0, 1]`.
    pub psi: f64,
    /// `psi'(rate)`, nonpositive.
    pub dpsi: f64,
}

/// Solved single-server system.
#[derive(Debug, Clone)]
pub struct Mg1Solution {
    /// Atom `P(W = 0)`. May underflow to zero in extreme overload.
    pub p0: f64,
    /// Per-class branch evaluations (class 1 first).
    pub branches: [Vec<BranchEval>; 2],
    /// Deepest anti-diagonal accumulated across all series evaluations.
    pub truncation_diagonal_used: usize,
    /// Largest relative geometric tail estimate across evaluations.
    pub tail_bound: f64,
}

impl Mg1Solution {
    /// `psi(theta)` for a rate that appears among the patience branches.
    pub fn psi_at(&self, rate: f64) -> Option<f64> {
        self.branches
            .iter()
            .flatten()
            .find(|b| b.rate == rate)
            .map(|b| b.psi)
    }

    /// `psi'(theta)` for a rate that appears among the patience branches.
    pub fn dpsi_at(&self, rate: f64) -> Option<f64> {
        self.branches
            .iter()
            .flatten()
            .find(|b| b.rate == rate)
            .map(|b| b.dpsi)
    }

    /// `P(T_i > W)` for class `i` (0-based): the branch-weighted `psi`.
    pub fn p_serve(&self, class: usize) -> f64 {
        self.branches[class].iter().map(|b| b.weight * b.psi).sum()
    }
}

/// Flattened patience branch: which class it belongs to, its weight and rate.
#[derive(Debug, Clone, Copy)]
struct FlatBranch {
    class: usize,
    weight: f64,
    rate: f64,
}

fn flatten_branches(config: &Mg1Config) -> Vec<FlatBranch> {
    let mut flat = Vec::new();
    for (class, params) in config.classes().iter().enumerate() {
        for (weight, rate) in params.patience.branches() {
            flat.push(FlatBranch { class, weight, rate });
        }
    }
    flat
}

fn series_branches<'a>(
    flat: &'a [FlatBranch],
    classes: [&'a ClassParams; 2],
) -> Vec<ScalarBranch<'a>> {
    flat.iter()
        .map(|b| {
            let class = classes[b.class];
            ScalarBranch {
                weight: b.weight,
                rate: b.rate,
                factor: Box::new(move |u: f64| {
                    (
                        equilibrium_factor_raw(class, u),
                        equilibrium_factor_derivative_raw(class, u),
                    )
                }),
            }
        })
        .collect()
}

/// The series `c(s) = sum_{i,j} c_{i,j}(s)`, with the scale multiplied back
/// in. Mostly useful for tests and diagnostics; `solve_mg1` keeps the scaled
/// form internally.
pub fn c_series(config: &Mg1Config, s: f64) -> Result<f64> {
    config.validate()?;
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("c_series requires s > 0, got {s}")));
    }
    let result = evaluate_series(config, s)?;
    Ok(result.value_unscaled())
}

fn evaluate_series(config: &Mg1Config, s: f64) -> Result<ScalarSeries> {
    let flat = flatten_branches(config);
    let branches = series_branches(&flat, config.classes());
    let result = scalar_series(
        &branches,
        s,
        SeriesControls { tolerance: config.tolerance, max_diagonal: config.max_diagonal },
    );
    if !result.diagnostics.converged {
        return Err(Error::NonConvergence {
            max_diagonal: config.max_diagonal,
            last_ratio: result.diagnostics.tail_bound,
        });
    }
    Ok(result)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

/// Solve the single-server system: evaluate the series at every patience
/// branch rate, determine `p0` from `psi(0) = 1`, and return `psi`, `psi'`
/// at those rates.
pub fn solve_mg1(config: &Mg1Config) -> Result<Mg1Solution> {
    config.validate()?;
    let flat = flatten_branches(config);

    if config.total_arrival_rate() == 0.0 {
        // Empty system: W = 0 with probability one.
        let branches = [0, 1].map(|class| {
            flat.iter()
                .filter(|b| b.class == class)
                .map(|b| BranchEval { weight: b.weight, rate: b.rate, psi: 1.0, dpsi: 0.0 })
                .collect()
        });
        return Ok(Mg1Solution {
            p0: 1.0,
            branches,
            truncation_diagonal_used: 0,
            tail_bound: 0.0,
        });
    }

    // One series evaluation per distinct branch rate.
    let mut rates: Vec<f64> = flat.iter().map(|b| b.rate).collect();
    rates.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
    rates.dedup();

    let mut evals: Vec<(f64, ScalarSeries)> = Vec::with_capacity(rates.len());
    for &rate in &rates {
        evals.push((rate, evaluate_series(config, rate)?));
    }
    let series_at = |rate: f64| -> &ScalarSeries {
        &evals.iter().find(|(r, _)| *r == rate).expect("evaluated").1
    };

    // p0 = 1 / (1 + sum_b w_b lambda_b tau_b c(theta_b)), assembled in log
    // space because c can carry an enormous scale under overload.
    let mut log_terms = vec![0.0f64]; // the leading 1
    for b in &flat {
        let class = config.classes()[b.class];
        let coeff = b.weight * class.arrival_rate * class.mean_service();
        if coeff == 0.0 {
            continue;
        }
        let series = series_at(b.rate);
        log_terms.push(coeff.ln() + series.value.ln() + series.diagnostics.log_scale);
    }
    let log_denom = log_sum_exp(&log_terms);
    if !log_denom.is_finite() || log_denom < 0.0 {
        return Err(Error::InvalidSolution(format!(
            "p0 normalization produced log-denominator {log_denom}; truncation too coarse"
        )));
    }
    let p0 = (-log_denom).exp();

    // psi(theta) = c(theta) / denom and psi'(theta) = c'(theta) / denom,
    // with the scale of the evaluation point cancelled against the
    // denominator.
    let mut branches: [Vec<BranchEval>; 2] = [Vec::new(), Vec::new()];
    let mut deepest = 0usize;
    let mut tail = 0.0f64;
    for b in &flat {
        let series = series_at(b.rate);
        let log_ratio = series.diagnostics.log_scale - log_denom;
        let psi = series.value * log_ratio.exp();
        let dpsi = series.deriv * log_ratio.exp();
        if !(psi > 0.0) || psi > 1.0 + 1e-9 {
            return Err(Error::InvalidSolution(format!(
                "psi({}) = {psi} outside (0, 1]; truncation too coarse",
                b.rate
            )));
        }
        if dpsi > 1e-9 {
            return Err(Error::InvalidSolution(format!(
                "psi'({}) = {dpsi} is positive; truncation too coarse",
                b.rate
            )));
        }
        branches[b.class].push(BranchEval {
            weight: b.weight,
            rate: b.rate,
            psi: psi.min(1.0),
            dpsi: dpsi.min(0.0),
        });
        deepest = deepest.max(series.diagnostics.diagonals);
        tail = tail.max(series.diagnostics.tail_bound);
    }

    Ok(Mg1Solution { p0, branches, truncation_diagonal_used: deepest, tail_bound: tail })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PatienceSpec, ServiceModel};
    use crate::oracles::{erlang_a, ErlangAParams};
    use approx::assert_relative_eq;

    fn class(
        arrival: f64,
        service: ServiceModel,
        theta: f64,
    ) -> ClassParams {
        ClassParams::new(arrival, service, PatienceSpec::Exponential { rate: theta }).unwrap()
    }

    fn exp_config(l1: f64, mu1: f64, th1: f64, l2: f64, mu2: f64, th2: f64) -> Mg1Config {
        Mg1Config::new(
            class(l1, ServiceModel::Exponential { rate: mu1 }, th1),
            class(l2, ServiceModel::Exponential { rate: mu2 }, th2),
        )
        .unwrap()
    }

    #[test]
    fn c_series_is_one_without_arrivals() {
        let config = exp_config(0.0, 1.0, 1.0, 0.0, 2.0, 2.0);
        for s in [0.3, 1.0, 5.0] {
            assert_relative_eq!(c_series(&config, s).unwrap(), 1.0, max_relative = 1e-14);
        }
        assert!(c_series(&config, 0.0).is_err());
    }

    #[test]
    fn empty_system_solution() {
        let config = exp_config(0.0, 1.0, 1.0, 0.0, 2.0, 2.0);
        let solution = solve_mg1(&config).unwrap();
        assert_eq!(solution.p0, 1.0);
        assert_eq!(solution.psi_at(1.0), Some(1.0));
        assert_eq!(solution.psi_at(2.0), Some(1.0));
    }

    #[test]
    fn symmetric_classes_match_superposed_single_class() {
        // Two identical Poisson streams superpose to one at twice the rate.
        let two = exp_config(0.7, 1.3, 0.9, 0.7, 1.3, 0.9);
        let one = exp_config(1.4, 1.3, 0.9, 0.0, 1.3, 0.9);
        for s in [0.5, 0.9, 2.0] {
            assert_relative_eq!(
                c_series(&two, s).unwrap(),
                c_series(&one, s).unwrap(),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn single_class_exponential_matches_birth_death_oracle() {
        for &(lambda, mu, theta) in
            &[(0.5, 1.0, 1.0), (0.9, 1.0, 0.5), (2.0, 1.0, 1.0), (1.3, 0.8, 2.5)]
        {
            let config = exp_config(lambda, mu, theta, 0.0, 1.0, theta);
            let solution = solve_mg1(&config).unwrap();
            let oracle = erlang_a(&ErlangAParams::new(lambda, mu, theta, 1)).unwrap();
            assert_relative_eq!(solution.p_serve(0), oracle.p_serve, max_relative = 1e-8);
        }
    }

    #[test]
    fn p0_self_consistency_and_utilization() {
        let config = exp_config(0.6, 1.0, 1.0, 0.8, 2.0, 1.7);
        let solution = solve_mg1(&config).unwrap();
        let mut rho = 0.0;
        let mut alt_p0 = 1.0;
        for (class, params) in config.classes().iter().enumerate() {
            let load = params.arrival_rate * params.mean_service() * solution.p_serve(class);
            rho += load;
            alt_p0 -= load;
        }
        assert!(rho >= 0.0 && rho < 1.0);
        assert_relative_eq!(solution.p0, alt_p0, max_relative = 1e-10);
    }

    #[test]
    fn monotone_in_competing_load() {
        // Raising class-1 traffic cannot raise psi(theta_2).
        let mut last = f64::INFINITY;
        for step in 0..6 {
            let lambda1 = 0.2 + 0.4 * step as f64;
            let config = exp_config(lambda1, 1.0, 1.0, 0.5, 2.0, 1.5);
            let solution = solve_mg1(&config).unwrap();
            let psi2 = solution.p_serve(1);
            assert!(psi2 <= last + 1e-12, "psi(theta_2) rose from {last} to {psi2}");
            last = psi2;
        }
    }

    #[test]
    fn deeper_truncation_stays_within_tail_bound() {
        let base = exp_config(1.4, 1.0, 0.8, 0.9, 2.0, 1.9);
        let solution = solve_mg1(&base).unwrap();
        let deeper = base
            .clone()
            .with_controls(base.tolerance * 1e-3, base.max_diagonal * 2)
            .unwrap();
        let refined = solve_mg1(&deeper).unwrap();
        for class in 0..2 {
            let a = solution.p_serve(class);
            let b = refined.p_serve(class);
            assert!(
                ((a - b) / b).abs() <= solution.tail_bound.max(1e-14),
                "psi moved by {} > tail bound {}",
                ((a - b) / b).abs(),
                solution.tail_bound
            );
        }
    }

    #[test]
    fn degenerate_hyperexponential_equals_exponential() {
        let exp = exp_config(0.8, 1.0, 1.2, 0.4, 2.0, 0.7);
        let hyper = Mg1Config::new(
            ClassParams::new(
                0.8,
                ServiceModel::Exponential { rate: 1.0 },
                PatienceSpec::HyperExponential { weights: vec![1.0], rates: vec![1.2] },
            )
            .unwrap(),
            ClassParams::new(
                0.4,
                ServiceModel::Exponential { rate: 2.0 },
                PatienceSpec::HyperExponential { weights: vec![0.5, 0.5], rates: vec![0.7, 0.7] },
            )
            .unwrap(),
        )
        .unwrap();
        let a = solve_mg1(&exp).unwrap();
        let b = solve_mg1(&hyper).unwrap();
        assert_relative_eq!(a.p0, b.p0, max_relative = 1e-12);
        for class in 0..2 {
            assert_relative_eq!(a.p_serve(class), b.p_serve(class), max_relative = 1e-12);
        }
    }

    #[test]
    fn hyperexponential_patience_well_formed() {
        let config = Mg1Config::new(
            ClassParams::new(
                0.9,
                ServiceModel::Deterministic { duration: 0.8 },
                PatienceSpec::HyperExponential {
                    weights: vec![0.25, 0.75],
                    rates: vec![0.5, 3.0],
                },
            )
            .unwrap(),
            ClassParams::new(
                0.5,
                ServiceModel::Erlang { phases: 3, rate: 4.0 },
                PatienceSpec::Exponential { rate: 1.1 },
            )
            .unwrap(),
        )
        .unwrap();
        let solution = solve_mg1(&config).unwrap();
        assert!(solution.p0 > 0.0 && solution.p0 <= 1.0);
        for class in 0..2 {
            let p = solution.p_serve(class);
            assert!(p > 0.0 && p <= 1.0);
            for branch in &solution.branches[class] {
                assert!(branch.dpsi <= 0.0);
                assert!(branch.psi >= solution.p0 - 1e-12);
            }
        }
        // LST monotonicity across branch rates of class 1.
        let b = &solution.branches[0];
        assert!(b[0].rate < b[1].rate);
        assert!(b[0].psi >= b[1].psi);
    }

    #[test]
    fn non_convergence_reported() {
        let config = exp_config(5.0, 1.0, 0.2, 5.0, 2.0, 0.3)
            .with_controls(1e-12, 5)
            .unwrap();
        match solve_mg1(&config) {
            Err(Error::NonConvergence { .. }) => {}
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }
}
