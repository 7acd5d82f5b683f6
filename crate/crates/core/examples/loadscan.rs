use renq::*;

fn neg(l: f64) -> MmkConfig {
    MmkConfig::new(
        5,
        ClassParams::new(l, ServiceModel::Exponential { rate: 1.0 }, PatienceSpec::Exponential { rate: 2.0 }).unwrap(),
        ClassParams::new(l, ServiceModel::Exponential { rate: 2.0 }, PatienceSpec::Exponential { rate: 1.0 }).unwrap(),
    ).unwrap()
}

fn main() {
    for l in [20.0, 50.0, 100.0, 200.0, 400.0, 600.0, 800.0, 1000.0] {
        let cfg = neg(l);
        match solve_mmk(&cfg) {
            Ok(s) => {
                let r = measures_mmk(&s, &cfg);
                println!("neg λ={:>6}: thr={:.4} AST={:.4} share2={:.4} ps1={:.5} ps2={:.5}",
                    l*2.0, r.throughput, r.avg_service_time_served, r.class2_share_of_served,
                    r.class1.p_serve, r.class2.p_serve);
            }
            Err(e) => println!("neg λ={:>6}: ERR {e}", l*2.0),
        }
    }
}
