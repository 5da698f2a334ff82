//! Privacy cost of releasing sparsified, noised updates over T rounds.
//!
//!     cargo run --example privacy_budget

use sparsehe::dp::{epsilon_for, epsilon_report, sigma_for_epsilon, tradeoff_epsilon, DpConfig, QUOTED_INTERMEDIATE};

fn main() {
    let cfg = DpConfig { rounds: 3, ..DpConfig::default() };
    let r = epsilon_report(&cfg, Some(QUOTED_INTERMEDIATE)).unwrap();
    println!("T = 3, s = 0.9, clip 1, sigma 1, delta 1e-5");
    println!("  natural log   eps = {:.4}", r.statement_natural);
    println!("  base-10 log   eps = {:.4}", r.statement_base10);
    println!("  derivation form: {:.4} / {:.4}", r.derivation_natural, r.derivation_base10);
    println!(
        "  sqrt(2T log 1/delta) = {:.2} / {:.2}; quoted {} reproducible: {:?}",
        r.intermediate_natural, r.intermediate_base10, QUOTED_INTERMEDIATE, r.quoted_reproducible
    );

    let sigma = sigma_for_epsilon(1.0, 0.9, 1.0, 3).unwrap();
    println!("sigma for eps = 1: {sigma:.4} (trade-off bound gives {:.3})", tradeoff_epsilon(sigma, 0.9, 1.0, 3));
    println!("  the full bound at that sigma: {:.1}", epsilon_for(&DpConfig { sigma, ..cfg }).unwrap().epsilon);

    println!();
    println!("rounds  eps(s=0.5)  eps(s=0.9)  eps(s=0.99)");
    for t in [1, 3, 10, 30, 100] {
        let e = |s| epsilon_for(&DpConfig { rounds: t, sparsity: s, ..cfg }).unwrap().epsilon;
        println!("{t:>6}  {:>10.3}  {:>10.3}  {:>11.4}", e(0.5), e(0.9), e(0.99));
    }
}
