//! Five clients encrypt their vectors under one public key; the server
//! adds ciphertexts without seeing any plaintext and the key holder
//! decrypts the sum.
//!
//!     cargo run --release --example he_aggregation

use sparsehe::he::{self, add_ciphertexts, decrypt, encrypt, Ciphertext, CkksContext, CkksParams};
use sparsehe::rng::rng_from;

fn main() {
    let params = CkksParams::desk();
    println!("parameters: N = {}, {}-bit q, scale 2^{} [{}]", params.ring_dim, params.q_bits, params.scale_log2, params.security);
    let ctx = CkksContext::new(params).unwrap();
    let keys = he::keygen(&ctx, 1);

    let slots = ctx.slot_count();
    let mut rng = rng_from(2);
    let clients: Vec<Vec<f64>> =
        (0..5).map(|_| (0..slots).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect()).collect();

    let cts: Vec<Ciphertext> =
        clients.iter().enumerate().map(|(i, v)| encrypt(&ctx.encode(v).unwrap(), &keys.public, &ctx, 100 + i as u64)).collect();
    let bytes = cts[0].to_bytes();
    println!("ciphertext: {} bytes on the wire ({} payload)", bytes.len(), cts[0].payload_bytes());

    let mut sum = cts[0].clone();
    for c in &cts[1..] {
        sum = add_ciphertexts(&sum, c, &ctx).unwrap();
    }
    let dec = decrypt(&sum, &keys.secret, &ctx).unwrap();
    let err = (0..slots).map(|i| (clients.iter().map(|v| v[i]).sum::<f64>() - dec[i]).abs()).fold(0.0, f64::max);
    println!("slot 0: plaintext sum {:.6}, decrypted {:.6}", clients.iter().map(|v| v[0]).sum::<f64>(), dec[0]);
    println!("max error over {slots} slots: {err:.2e}");

    let other = CkksContext::new(CkksParams::desk_packing()).unwrap();
    let k2 = he::keygen(&other, 3);
    let foreign = encrypt(&other.encode(&[1.0]).unwrap(), &k2.public, &other, 4);
    println!("adding ciphertexts at different scales: {}", add_ciphertexts(&sum, &foreign, &ctx).unwrap_err());
}
