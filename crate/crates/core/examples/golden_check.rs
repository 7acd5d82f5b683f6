use renq::*;

fn mmk(k: usize, l1: f64, mu1: f64, th1: f64, l2: f64, mu2: f64, th2: f64) -> MmkConfig {
    MmkConfig::new(
        k,
        ClassParams::new(l1, ServiceModel::Exponential { rate: mu1 }, PatienceSpec::Exponential { rate: th1 }).unwrap(),
        ClassParams::new(l2, ServiceModel::Exponential { rate: mu2 }, PatienceSpec::Exponential { rate: th2 }).unwrap(),
    ).unwrap()
}

fn main() {
    // §5 footnote: base system λ=20
    let base = mmk(5, 10.0, 1.0, 1.5, 10.0, 2.0, 1.5);
    let r = measures_mmk(&solve_mmk(&base).unwrap(), &base);
    println!("base:     pct={:.4} ws={:.4} wr={:.4} overall={:.4}", r.pct_served_all, r.wait_served_all, r.wait_reneged_all, r.overall_awt);
    // negative system θ=(2,1)
    let neg = mmk(5, 10.0, 1.0, 2.0, 10.0, 2.0, 1.0);
    let r = measures_mmk(&solve_mmk(&neg).unwrap(), &neg);
    println!("negative: pct={:.4} ws={:.4} wr={:.4} overall={:.4}", r.pct_served_all, r.wait_served_all, r.wait_reneged_all, r.overall_awt);

    // Table 1 analytic mu1 != mu2 rows (seconds)
    let mu1 = 1.0/223.97; let mu2 = 1.0/448.82;
    let th1 = 1.0/394.08; let th2 = 1.0/946.53;
    for lam_hr in [36.0, 45.0, 60.0, 120.0] {
        let li = lam_hr / 2.0 / 3600.0;
        let cfg = mmk(5, li, mu1, th1, li, mu2, th2);
        let r = measures_mmk(&solve_mmk(&cfg).unwrap(), &cfg);
        println!("T1 λ={:>3}: AWT=({:.2},{:.2}) RS=({:.2}%,{:.2}%) AQ=({:.2},{:.2}) Util={:.2}% AST={:.2}",
            lam_hr, r.class1.awt, r.class2.awt, 100.0*r.class1.p_serve, 100.0*r.class2.p_serve,
            r.class1.lq, r.class2.lq, 100.0*r.utilization, r.avg_service_time_served);
    }
    // Table 1 mu1 == mu2 rows, pooled mean 336.395 s
    let mu = 1.0/((223.97+448.82)/2.0);
    for lam_hr in [36.0, 45.0, 60.0, 120.0] {
        let li = lam_hr / 2.0 / 3600.0;
        let cfg = mmk(5, li, mu, th1, li, mu, th2);
        let r = measures_mmk(&solve_mmk_equal_mu(&cfg).unwrap(), &cfg);
        println!("T1= λ={:>3}: AWT=({:.2},{:.2}) RS=({:.2}%,{:.2}%) AQ=({:.2},{:.2}) Util={:.2}% AST={:.2}",
            lam_hr, r.class1.awt, r.class2.awt, 100.0*r.class1.p_serve, 100.0*r.class2.p_serve,
            r.class1.lq, r.class2.lq, 100.0*r.utilization, r.avg_service_time_served);
    }
    // §5 asymptotic: positive system θ=(1,2) at λ1=λ2=1000
    let pos = mmk(5, 1000.0, 1.0, 1.0, 1000.0, 2.0, 2.0);
    let r = measures_mmk(&solve_mmk(&pos).unwrap(), &pos);
    println!("positive λ=2000: share2={:.4} thr={:.4} AST={:.4}", r.class2_share_of_served, r.throughput, r.avg_service_time_served);
    let neg = mmk(5, 1000.0, 1.0, 2.0, 1000.0, 2.0, 1.0);
    let r = measures_mmk(&solve_mmk(&neg).unwrap(), &neg);
    println!("negative λ=2000: share2={:.4} thr={:.4} AST={:.4}", r.class2_share_of_served, r.throughput, r.avg_service_time_served);
}
