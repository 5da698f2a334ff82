//! Upload size for a 67M-parameter model at 90% sparsity, packed 64
//! values per slot into N = 8192 ciphertexts.
//!
//!     cargo run --example communication_accounting

use sparsehe::accounting::{he_only_modes, mb_display, reference_breakdown, REFERENCE_D, TABLE_HE_ONLY_TOTAL_MB};
use sparsehe::he::{CkksParams, PackingConfig, SlotModel};

fn main() {
    let full = reference_breakdown(SlotModel::FullRing);
    for line in full.steps() {
        println!("{line}");
    }

    // Counting only N/2 complex slots doubles the ciphertext count.
    let half = reference_breakdown(SlotModel::HalfRing);
    println!();
    println!("half-ring slots: {} ciphertexts, {} MB per client", half.ciphertexts, mb_display(half.per_client_bytes, 1));

    let pc = PackingConfig { lanes: 64, ..PackingConfig::default() };
    let modes = he_only_modes(REFERENCE_D, 5, &CkksParams::reference(), &pc, SlotModel::FullRing, TABLE_HE_ONLY_TOTAL_MB);
    println!();
    println!("encryption without sparsification, 5 clients:");
    println!("  packed   {:>10.1} MB", modes.packed.total_mb);
    println!("  unpacked {:>10.1} MB", modes.unpacked.total_mb);
    println!("  5x plain {:>10.1} MB", modes.expansion_5x_total_mb);
    println!("  closest to {} MB: {}", modes.reference_total_mb, modes.closest);
}
