use renq::*;
fn main() {
    // swapped-negative: class1 = (mu=2, th=1), class2 = (mu=1, th=2)
    let swapped = MmkConfig::new(
        5,
        ClassParams::new(1000.0, ServiceModel::Exponential { rate: 2.0 }, PatienceSpec::Exponential { rate: 1.0 }).unwrap(),
        ClassParams::new(1000.0, ServiceModel::Exponential { rate: 1.0 }, PatienceSpec::Exponential { rate: 2.0 }).unwrap(),
    ).unwrap();
    match solve_mmk(&swapped) {
        Ok(s) => {
            let r = measures_mmk(&s, &swapped);
            println!("swapped-neg OK: share2={:.4} thr={:.4} AST={:.4}", r.class2_share_of_served, r.throughput, r.avg_service_time_served);
        }
        Err(e) => println!("swapped-neg ERR: {e}"),
    }
    // scales of the series at each theta for the negative orientation
    let neg = MmkConfig::new(
        5,
        ClassParams::new(1000.0, ServiceModel::Exponential { rate: 1.0 }, PatienceSpec::Exponential { rate: 2.0 }).unwrap(),
        ClassParams::new(1000.0, ServiceModel::Exponential { rate: 2.0 }, PatienceSpec::Exponential { rate: 1.0 }).unwrap(),
    ).unwrap();
    for s in [2.0, 1.0] {
        let (c, cp, d) = c_matrix_series(&neg, s).unwrap();
        println!("neg series s={s}: L={:.2} diagonals={} |C|max={:.3e} |C'|max={:.3e}", d.log_scale, d.diagonals, c.abs().max(), cp.abs().max());
    }
    let pos = MmkConfig::new(
        5,
        ClassParams::new(1000.0, ServiceModel::Exponential { rate: 1.0 }, PatienceSpec::Exponential { rate: 1.0 }).unwrap(),
        ClassParams::new(1000.0, ServiceModel::Exponential { rate: 2.0 }, PatienceSpec::Exponential { rate: 2.0 }).unwrap(),
    ).unwrap();
    for s in [1.0, 2.0] {
        let (c, cp, d) = c_matrix_series(&pos, s).unwrap();
        println!("pos series s={s}: L={:.2} diagonals={} |C|max={:.3e} |C'|max={:.3e}", d.log_scale, d.diagonals, c.abs().max(), cp.abs().max());
    }
}
