//! Ten rounds of the full pipeline on a non-IID synthetic task, one line
//! per round.
//!
//!     cargo run --release --example federated_round

use sparsehe::fl::{FlConfig, FlEnv};

fn main() {
    let cfg = FlConfig { rounds: 10, ..FlConfig::default() };
    let env = FlEnv::new(cfg.clone()).unwrap();
    println!("HE parameters: {}", cfg.he.params.security);
    println!("client shard sizes: {:?}", env.clients.iter().map(|c| c.len()).collect::<Vec<_>>());
    println!("round  acc     loss    union  cts  upload/client  epsilon");
    let mut state = env.initial_state();
    for round in 1..=cfg.rounds {
        let (next, r, _) = env.run_round(&state, round).unwrap();
        println!(
            "{round:>5}  {:.4}  {:.4}  {:>5}  {:>3}  {:>10} B   {:.1}",
            r.global_accuracy,
            r.loss,
            r.union_size,
            r.ciphertexts,
            r.bytes_up_per_client,
            r.epsilon_cumulative.unwrap_or(f64::INFINITY)
        );
        state = next;
    }
}
