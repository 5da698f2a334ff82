//! Confidence-threshold membership inference against the private
//! pipeline, plain federated averaging and a deliberately overfit model.
//!
//!     cargo run --release --example membership_inference

use sparsehe::attacks::{confidences, mia_comparison, permutation_null, OverfitConfig};
use sparsehe::fl::{run_experiment, FlConfig};
use sparsehe::stats::median;

fn main() {
    let cfg = FlConfig { rounds: 10, ..FlConfig::default() };
    let mut private = Vec::new();
    let mut overfit = Vec::new();
    println!("seed  private  standard  overfit");
    for seed in 42..47 {
        let r = mia_comparison(&cfg, &OverfitConfig::default(), seed).unwrap();
        println!(
            "{seed:>4}  {:.4}   {:.4}    {:.4}",
            r.private.attack_success_rate, r.standard.attack_success_rate, r.overfit.attack_success_rate
        );
        private.push(r.private.attack_success_rate);
        overfit.push(r.overfit.attack_success_rate);
    }
    println!("median: private {:.4}, overfit {:.4}", median(&private), median(&overfit));

    // Shuffling the membership labels shows what chance looks like.
    let run = run_experiment(&FlConfig { seed: 42, ..cfg }).unwrap();
    let (m, n) = (confidences(&run.model, &run.train), confidences(&run.model, &run.test));
    let null = permutation_null(&m, &n, 200, 1).unwrap();
    let inside = null.iter().filter(|x| (0.45..=0.55).contains(*x)).count();
    println!("label-permutation null: {inside}/200 within [0.45, 0.55], max {:.4}", null.iter().cloned().fold(0.0, f64::max));
}
