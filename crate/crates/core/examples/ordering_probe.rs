use conform::calibration::synthetic;

fn main() {
    let mut holds = 0;
    for seed in 0..10u64 {
        let o = synthetic::run_ordering(seed).unwrap();
        let ok = o.ordering_holds();
        holds += ok as u32;
        println!(
            "seed {seed}: unc {:.3}/{:.3}  local {:.3}/{:.3}  global {:.3}/{:.3}  holds={ok}",
            o.uncalibrated.micro_f1_constrained,
            o.uncalibrated.micro_f1_unconstrained,
            o.local.micro_f1_constrained,
            o.local.micro_f1_unconstrained,
            o.global.micro_f1_constrained,
            o.global.micro_f1_unconstrained,
        );
    }
    println!("ordering holds on {holds}/10 seeds");
}
