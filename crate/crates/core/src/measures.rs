//! Steady-state performance measures derived from the solved transforms.
//!
//! Everything follows from `P(T_i > W)`, the branch-weighted LST at the
//! patience rates, and from `E(W e^{-theta_i W})`, the negated LST
//! derivative there: waiting times by conditioning on whether patience
//! outlasts the virtual wait, queue lengths by Little's law, utilization and
//! throughput by flow balance. Percentages are kept as fractions; formatting
//! is a front-end concern.

use serde::{Deserialize, Serialize};

use crate::mg1::Mg1Solution;
use crate::mmk::MmkSolution;
use crate::model::{Mg1Config, MmkConfig};

/// Measures for one customer class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMeasures {
    /// `P(T_i > W)`: fraction of the class that eventually receives service.
    pub p_serve: f64,
    /// `E[min(W, T_i)]`: mean time spent waiting, served or not.
    pub awt: f64,
    /// `E[W | T_i > W]`: mean wait of customers who receive service.
    pub wait_served: f64,
    /// `E[min(W, T_i) | T_i <= W]`: mean wait of customers who renege.
    pub wait_reneged: f64,
    /// `E[L_i^q]`: mean number waiting in queue.
    pub lq: f64,
    /// `E[L_i]`: mean number in the system (queue plus in service).
    pub l_total: f64,
    /// Rate of class-i customers entering service.
    pub throughput: f64,
    /// Rate of class-i customers abandoning.
    pub reneging_rate: f64,
}

/// Per-class and aggregate steady-state measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub class1: ClassMeasures,
    pub class2: ClassMeasures,
    /// Fraction of servers busy (single-server: busy probability).
    pub utilization: f64,
    /// Total rate of customers entering service.
    pub throughput: f64,
    /// Total abandonment rate.
    pub reneging_rate: f64,
    /// Fraction of all customers that receive service.
    pub pct_served_all: f64,
    /// Mean waiting time over all customers.
    pub overall_awt: f64,
    /// Mean wait of served customers, both classes pooled.
    pub wait_served_all: f64,
    /// Mean wait of reneging customers, both classes pooled.
    pub wait_reneged_all: f64,
    /// Mean service time among customers that receive service.
    pub avg_service_time_served: f64,
    /// Share of served customers that belong to class 2.
    pub class2_share_of_served: f64,
}

impl PerformanceReport {
    pub fn class(&self, index: usize) -> &ClassMeasures {
        match index {
            0 => &self.class1,
            1 => &self.class2,
            _ => panic!("class index out of range"),
        }
    }

    /// Flatten into a fixed field order (see [`PerformanceReport::FIELDS`]).
    pub fn to_vec(&self) -> Vec<f64> {
        let class = |c: &ClassMeasures| {
            vec![
                c.p_serve,
                c.awt,
                c.wait_served,
                c.wait_reneged,
                c.lq,
                c.l_total,
                c.throughput,
                c.reneging_rate,
            ]
        };
        let mut values = class(&self.class1);
        values.extend(class(&self.class2));
        values.extend([
            self.utilization,
            self.throughput,
            self.reneging_rate,
            self.pct_served_all,
            self.overall_awt,
            self.wait_served_all,
            self.wait_reneged_all,
            self.avg_service_time_served,
            self.class2_share_of_served,
        ]);
        values
    }

    pub fn from_vec(values: &[f64]) -> PerformanceReport {
        assert_eq!(values.len(), Self::FIELDS.len());
        let class = |offset: usize| ClassMeasures {
            p_serve: values[offset],
            awt: values[offset + 1],
            wait_served: values[offset + 2],
            wait_reneged: values[offset + 3],
            lq: values[offset + 4],
            l_total: values[offset + 5],
            throughput: values[offset + 6],
            reneging_rate: values[offset + 7],
        };
        PerformanceReport {
            class1: class(0),
            class2: class(8),
            utilization: values[16],
            throughput: values[17],
            reneging_rate: values[18],
            pct_served_all: values[19],
            overall_awt: values[20],
            wait_served_all: values[21],
            wait_reneged_all: values[22],
            avg_service_time_served: values[23],
            class2_share_of_served: values[24],
        }
    }

    /// Field names matching the order of [`PerformanceReport::to_vec`].
    pub const FIELDS: [&'static str; 25] = [
        "class1.p_serve",
        "class1.awt",
        "class1.wait_served",
        "class1.wait_reneged",
        "class1.lq",
        "class1.l_total",
        "class1.throughput",
        "class1.reneging_rate",
        "class2.p_serve",
        "class2.awt",
        "class2.wait_served",
        "class2.wait_reneged",
        "class2.lq",
        "class2.l_total",
        "class2.throughput",
        "class2.reneging_rate",
        "utilization",
        "throughput",
        "reneging_rate",
        "pct_served_all",
        "overall_awt",
        "wait_served_all",
        "wait_reneged_all",
        "avg_service_time_served",
        "class2_share_of_served",
    ];
}

fn ratio(num: f64, denom: f64) -> f64 {
    if denom > 0.0 {
        num / denom
    } else {
        0.0
    }
}

/// Common assembly once each class provides `(lambda, p_serve, awt,
/// E(W; T>W), mean service time)` and the caller supplies the number of
/// servers for the utilization scale.
fn assemble(
    per_class: [(f64, f64, f64, f64, f64); 2],
    servers: f64,
) -> PerformanceReport {
    let mut classes = [ClassMeasures {
        p_serve: 0.0,
        awt: 0.0,
        wait_served: 0.0,
        wait_reneged: 0.0,
        lq: 0.0,
        l_total: 0.0,
        throughput: 0.0,
        reneging_rate: 0.0,
    }; 2];

    for (slot, &(lambda, p_serve, awt, served_wait_mass, mean_service)) in
        per_class.iter().enumerate()
    {
        let wait_served = ratio(served_wait_mass, p_serve);
        let wait_reneged = if p_serve < 1.0 {
            (awt - served_wait_mass) / (1.0 - p_serve)
        } else {
            0.0
        };
        let lq = lambda * awt;
        classes[slot] = ClassMeasures {
            p_serve,
            awt,
            wait_served,
            wait_reneged: wait_reneged.max(0.0),
            lq,
            l_total: lq + lambda * p_serve * mean_service,
            throughput: lambda * p_serve,
            reneging_rate: lambda * (1.0 - p_serve),
        };
    }

    let lambda_total = per_class[0].0 + per_class[1].0;
    let throughput = classes[0].throughput + classes[1].throughput;
    let reneging_rate = classes[0].reneging_rate + classes[1].reneging_rate;
    let busy_servers: f64 = per_class
        .iter()
        .map(|&(lambda, p_serve, _, _, mean_service)| lambda * p_serve * mean_service)
        .sum();
    let total_wait_mass: f64 = per_class
        .iter()
        .map(|&(lambda, _, awt, _, _)| lambda * awt)
        .sum();
    let served_wait_mass_total: f64 = per_class
        .iter()
        .map(|&(lambda, _, _, mass, _)| lambda * mass)
        .sum();
    let reneged_wait_mass_total = total_wait_mass - served_wait_mass_total;

    PerformanceReport {
        class1: classes[0],
        class2: classes[1],
        utilization: ratio(busy_servers, servers),
        throughput,
        reneging_rate,
        pct_served_all: ratio(throughput, lambda_total),
        overall_awt: ratio(total_wait_mass, lambda_total),
        wait_served_all: ratio(served_wait_mass_total, throughput),
        wait_reneged_all: ratio(reneged_wait_mass_total.max(0.0), reneging_rate),
        avg_service_time_served: ratio(busy_servers, throughput),
        class2_share_of_served: ratio(classes[1].throughput, throughput),
    }
}

/// Measures of the k-server system.
pub fn measures_mmk(solution: &MmkSolution, config: &MmkConfig) -> PerformanceReport {
    let theta = config.patience_rates();
    let theta = [theta.0, theta.1];
    let (mu1, mu2) = config.service_rates();
    let mean_service = [1.0 / mu1, 1.0 / mu2];
    let lambda = [config.class1.arrival_rate, config.class2.arrival_rate];

    let mut per_class = [(0.0, 0.0, 0.0, 0.0, 0.0); 2];
    for class in 0..2 {
        let p_serve = solution.p_serve(class).clamp(0.0, 1.0);
        let awt = (1.0 - p_serve) / theta[class];
        let served_wait_mass = solution.wait_transform(class).max(0.0);
        per_class[class] = (lambda[class], p_serve, awt, served_wait_mass, mean_service[class]);
    }
    assemble(per_class, config.servers as f64)
}

/// Measures of the single-server system.
pub fn measures_mg1(solution: &Mg1Solution, config: &Mg1Config) -> PerformanceReport {
    let mut per_class = [(0.0, 0.0, 0.0, 0.0, 0.0); 2];
    for (class, params) in config.classes().iter().enumerate() {
        let branches = &solution.branches[class];
        let p_serve: f64 = branches.iter().map(|b| b.weight * b.psi).sum();
        let awt: f64 = branches
            .iter()
            .map(|b| b.weight * (1.0 - b.psi) / b.rate)
            .sum();
        let served_wait_mass: f64 = branches.iter().map(|b| b.weight * -b.dpsi).sum();
        per_class[class] = (
            params.arrival_rate,
            p_serve.clamp(0.0, 1.0),
            awt,
            served_wait_mass.max(0.0),
            params.mean_service(),
        );
    }
    assemble(per_class, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mg1::solve_mg1;
    use crate::mmk::{solve_mmk, solve_mmk_equal_mu};
    use crate::model::{ClassParams, PatienceSpec, ServiceModel};
    use crate::oracles::{erlang_a, ErlangAParams};
    use approx::assert_relative_eq;

    fn mg1(l1: f64, s1: ServiceModel, th1: f64, l2: f64, s2: ServiceModel, th2: f64) -> Mg1Config {
        Mg1Config::new(
            ClassParams::new(l1, s1, PatienceSpec::Exponential { rate: th1 }).unwrap(),
            ClassParams::new(l2, s2, PatienceSpec::Exponential { rate: th2 }).unwrap(),
        )
        .unwrap()
    }

    fn mmk(k: usize, l1: f64, mu1: f64, th1: f64, l2: f64, mu2: f64, th2: f64) -> MmkConfig {
        MmkConfig::new(
            k,
            ClassParams::new(
                l1,
                ServiceModel::Exponential { rate: mu1 },
                PatienceSpec::Exponential { rate: th1 },
            )
            .unwrap(),
            ClassParams::new(
                l2,
                ServiceModel::Exponential { rate: mu2 },
                PatienceSpec::Exponential { rate: th2 },
            )
            .unwrap(),
        )
        .unwrap()
    }

    fn check_identities(report: &PerformanceReport, lambda: [f64; 2]) {
        for (class, measures) in [(0, &report.class1), (1, &report.class2)] {
            assert_relative_eq!(
                measures.throughput + measures.reneging_rate,
                lambda[class],
                max_relative = 1e-12
            );
            // Little's law is exact by construction.
            assert_eq!(measures.lq, lambda[class] * measures.awt);
            // Decomposition of the unconditional wait.
            let decomposed = measures.p_serve * measures.wait_served
                + (1.0 - measures.p_serve) * measures.wait_reneged;
            assert_relative_eq!(measures.awt, decomposed, epsilon = 1e-10);
            assert!(measures.p_serve >= 0.0 && measures.p_serve <= 1.0);
        }
        assert!(report.utilization >= 0.0 && report.utilization <= 1.0 + 1e-9);
        let overall = report.pct_served_all * report.wait_served_all
            + (1.0 - report.pct_served_all) * report.wait_reneged_all;
        assert_relative_eq!(report.overall_awt, overall, epsilon = 1e-10);
    }

    #[test]
    fn mg1_identities_and_flow_conservation() {
        let config = mg1(
            0.7,
            ServiceModel::Exponential { rate: 1.0 },
            1.0,
            0.5,
            ServiceModel::Deterministic { duration: 0.4 },
            2.0,
        );
        let report = measures_mg1(&solve_mg1(&config).unwrap(), &config);
        check_identities(&report, [0.7, 0.5]);
        assert_relative_eq!(
            report.throughput + report.reneging_rate,
            1.2,
            max_relative = 1e-12
        );
    }

    #[test]
    fn mg1_infinite_server_identity() {
        // With tau_i = 1/theta_i the system behaves per class like an
        // infinite-server queue: E(L_i) = lambda_i / theta_i.
        let config = mg1(
            0.9,
            ServiceModel::Exponential { rate: 2.0 },
            2.0,
            0.6,
            ServiceModel::Deterministic { duration: 0.25 },
            4.0,
        );
        let report = measures_mg1(&solve_mg1(&config).unwrap(), &config);
        assert_relative_eq!(report.class1.l_total, 0.9 / 2.0, max_relative = 1e-8);
        assert_relative_eq!(report.class2.l_total, 0.6 / 4.0, max_relative = 1e-8);
    }

    #[test]
    fn mg1_single_class_matches_erlang_a_measures() {
        let config = mg1(
            0.8,
            ServiceModel::Exponential { rate: 1.0 },
            1.3,
            0.0,
            ServiceModel::Exponential { rate: 1.0 },
            1.3,
        );
        let report = measures_mg1(&solve_mg1(&config).unwrap(), &config);
        let oracle = erlang_a(&ErlangAParams::new(0.8, 1.0, 1.3, 1)).unwrap();
        assert_relative_eq!(report.class1.p_serve, oracle.p_serve, max_relative = 1e-8);
        assert_relative_eq!(report.class1.awt, oracle.awt, max_relative = 1e-8);
        assert_relative_eq!(report.class1.lq, oracle.lq, max_relative = 1e-8);
        assert_relative_eq!(report.utilization, oracle.utilization, max_relative = 1e-8);
    }

    #[test]
    fn empty_system_is_all_zero() {
        let config = mg1(
            0.0,
            ServiceModel::Exponential { rate: 1.0 },
            1.0,
            0.0,
            ServiceModel::Exponential { rate: 2.0 },
            2.0,
        );
        let report = measures_mg1(&solve_mg1(&config).unwrap(), &config);
        assert_eq!(report.throughput, 0.0);
        assert_eq!(report.utilization, 0.0);
        assert_eq!(report.overall_awt, 0.0);
        assert_eq!(report.class1.lq, 0.0);
    }

    #[test]
    fn mmk_identities() {
        let config = mmk(5, 10.0, 1.0, 1.5, 10.0, 2.0, 1.5);
        let report = measures_mmk(&solve_mmk(&config).unwrap(), &config);
        check_identities(&report, [10.0, 10.0]);
    }

    #[test]
    fn scalar_and_general_reports_agree_for_equal_rates() {
        let config = mmk(5, 3.0, 1.1, 0.6, 5.0, 1.1, 1.9);
        let general = measures_mmk(&solve_mmk(&config).unwrap(), &config);
        let scalar = measures_mmk(&solve_mmk_equal_mu(&config).unwrap(), &config);
        for (a, b) in general.to_vec().iter().zip(scalar.to_vec()) {
            if b.abs() > 1e-300 {
                assert_relative_eq!(*a, b, max_relative = 1e-9);
            } else {
                assert!(a.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vec_roundtrip() {
        let config = mmk(3, 2.0, 1.0, 1.0, 1.0, 2.0, 2.0);
        let report = measures_mmk(&solve_mmk(&config).unwrap(), &config);
        let roundtrip = PerformanceReport::from_vec(&report.to_vec());
        assert_eq!(report, roundtrip);
    }
}
