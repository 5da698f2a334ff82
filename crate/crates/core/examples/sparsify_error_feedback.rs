//! Adaptive top-k with error feedback on a stream of random gradients.
//! Whatever is pruned stays in memory and is sent later, so nothing is
//! lost: the running sum of sent values equals the running sum of
//! gradients minus the current memory.
//!
//!     cargo run --example sparsify_error_feedback

use rand_distr::{Distribution, Normal};
use sparsehe::rng::rng_from;
use sparsehe::sparsifier::{sparsify_with_stats, SparsifierConfig, SparsifierState};

fn main() {
    let d = 1000;
    let cfg = SparsifierConfig { sparsity: 0.9, alpha: 0.7, error_feedback: true, adaptive_threshold: true };
    let mut state = SparsifierState::new(d);
    let mut rng = rng_from(7);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (mut sum_g, mut sum_sent) = (vec![0.0; d], vec![0.0; d]);

    println!("round  k    nnz  tau_now  tau_ema  |memory|");
    for t in 1..=10 {
        let g: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        let (sparse, next, stats) = sparsify_with_stats(&g.clone().into(), &cfg, &state).unwrap();
        for i in 0..d {
            sum_g[i] += g[i];
            sum_sent[i] += sparse.values[i];
        }
        state = next;
        println!(
            "{t:>5}  {:<4} {:<4} {:<8.4} {:<8.4} {:.3}",
            stats.k,
            stats.nnz,
            stats.tau_current,
            stats.tau,
            state.error_norm()
        );
    }
    let drift = (0..d).map(|i| (sum_sent[i] - (sum_g[i] - state.error[i])).abs()).fold(0.0, f64::max);
    println!("max |sum sent - (sum gradients - memory)| = {drift:.2e}");
}
