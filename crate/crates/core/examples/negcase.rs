use renq::*;
fn main() {
    let cfg = MmkConfig::new(
        5,
        ClassParams::new(1000.0, ServiceModel::Exponential { rate: 1.0 }, PatienceSpec::Exponential { rate: 2.0 }).unwrap(),
        ClassParams::new(1000.0, ServiceModel::Exponential { rate: 2.0 }, PatienceSpec::Exponential { rate: 1.0 }).unwrap(),
    ).unwrap();
    match solve_mmk(&cfg) {
        Ok(s) => {
            let r = measures_mmk(&s, &cfg);
            println!("share2={:.4} thr={:.4} AST={:.4}", r.class2_share_of_served, r.throughput, r.avg_service_time_served);
        }
        Err(e) => println!("ERR: {e}"),
    }
}
