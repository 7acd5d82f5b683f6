use renq::*;
fn neg(l: f64) -> MmkConfig {
    MmkConfig::new(
        5,
        ClassParams::new(l, ServiceModel::Exponential { rate: 1.0 }, PatienceSpec::Exponential { rate: 2.0 }).unwrap(),
        ClassParams::new(l, ServiceModel::Exponential { rate: 2.0 }, PatienceSpec::Exponential { rate: 1.0 }).unwrap(),
    ).unwrap()
}
fn main() {
    for l in [200.0, 400.0, 1000.0] {
        eprintln!("=== lambda_total = {}", l * 2.0);
        match solve_mmk(&neg(l)) {
            Ok(s) => eprintln!("OK ps2={:.5}", s.p_serve(1)),
            Err(e) => eprintln!("ERR {e}"),
        }
    }
}
