//! Sparse SGD with and without error feedback on ill-conditioned
//! quadratics; prints the fitted log-log slope and the final-loss ratio.
//!
//!     cargo run --release --example convergence_rates

use sparsehe::convergence::{run_suite, ConvergenceConfig};

fn main() {
    let cfg = ConvergenceConfig::default();
    println!("d = {}, s = {}, eta = {} / sqrt(t), T = {}", cfg.dim, cfg.sparsity, cfg.eta, cfg.steps);
    for p in run_suite(&cfg, &[42, 43, 44, 45, 46]).unwrap() {
        println!("h_min = {}", p.h_min);
        println!("  slopes with feedback: {:?}", p.slopes.iter().map(|s| s.map(|v| (v * 1000.0).round() / 1000.0)).collect::<Vec<_>>());
        println!("  median slope {:.3}, final loss without / with feedback {:.2}x", p.median_slope, p.feedback_gain);
        for t in [10, 100, 1000, cfg.steps] {
            println!("  t = {t:>5}: {:.3e} vs {:.3e}", p.median_with_feedback[t - 1], p.median_without_feedback[t - 1]);
        }
    }
}
