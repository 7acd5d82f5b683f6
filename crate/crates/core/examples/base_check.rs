use renq::*;

fn main() {
    let class1 = ClassParams::new(10.0, ServiceModel::Exponential { rate: 1.0 }, PatienceSpec::Exponential { rate: 1.5 }).unwrap();
    let class2 = ClassParams::new(10.0, ServiceModel::Exponential { rate: 2.0 }, PatienceSpec::Exponential { rate: 1.5 }).unwrap();
    let cfg = MmkConfig::new(5, class1.clone(), class2.clone()).unwrap();
    let r = measures_mmk(&solve_mmk(&cfg).unwrap(), &cfg);
    println!("analytic: pct={:.5} ws={:.5} wr={:.5} overall={:.5}", r.pct_served_all, r.wait_served_all, r.wait_reneged_all, r.overall_awt);

    let sim_cfg = SimConfig::new(5, class1, class2).unwrap().with_run(2_000_000, 0.1, 12, 99).unwrap();
    let est = simulate(&sim_cfg).unwrap();
    println!("sim:      pct={:.5}±{:.5} ws={:.5}±{:.5} wr={:.5}±{:.5} overall={:.5}±{:.5}",
        est.mean.pct_served_all, est.half_width.pct_served_all,
        est.mean.wait_served_all, est.half_width.wait_served_all,
        est.mean.wait_reneged_all, est.half_width.wait_reneged_all,
        est.mean.overall_awt, est.half_width.overall_awt);
}
