//! Removes one mechanism at a time and compares final loss, accuracy and
//! upload over five seeds.
//!
//!     cargo run --release --example ablation_study

use sparsehe::fl::{run_trials, FlConfig};
use sparsehe::manifest::standard_ablations;
use sparsehe::stats::{mean, median, std_dev};

fn main() {
    let seeds = [42, 43, 44, 45, 46];
    let base = FlConfig { rounds: 10, ..FlConfig::default() };
    println!("{:<24} {:>10} {:>18} {:>12}", "configuration", "loss", "accuracy", "upload B");
    for v in standard_ablations() {
        let results = run_trials(&FlConfig { mechanisms: v.mechanisms, ..base.clone() }, &seeds).unwrap();
        let loss: Vec<f64> = results.iter().map(|r| r.final_report().loss).collect();
        let acc: Vec<f64> = results.iter().map(|r| r.final_report().global_accuracy).collect();
        let up: Vec<f64> = results.iter().map(|r| r.final_report().bytes_up_per_client as f64).collect();
        println!(
            "{:<24} {:>10.4} {:>10.4} ± {:.4} {:>12.0}",
            v.name,
            median(&loss),
            mean(&acc),
            std_dev(&acc),
            median(&up)
        );
    }
}
