//! Several quantized values share one slot. Guard bits above each lane
//! absorb the carries of an n-way sum, so the lanes of the decrypted sum
//! are exactly the sums of the lanes.
//!
//!     cargo run --example lane_packing

use sparsehe::he::packing::{guard_bits_for, pack_lanes, unpack_sum};
use sparsehe::he::{self, add_ciphertexts, decrypt, encrypt, CkksContext, CkksParams, PackingConfig};

fn main() {
    let n = 5;
    let pc = PackingConfig { lanes: 2, lane_bits: 8, guard_bits: guard_bits_for(n).max(8), clip_range: 1.0 };
    println!("{} lanes x ({} value + {} guard bits) = {} bits per slot", pc.lanes, pc.lane_bits, pc.guard_bits, pc.packed_bits());

    let values: Vec<Vec<f64>> = (0..n).map(|c| (0..6).map(|i| ((c * 7 + i * 3) % 11) as f64 / 10.0 - 0.5).collect()).collect();
    let ctx = CkksContext::new(CkksParams::desk_packing()).unwrap();
    println!("usable integer bits per slot: {}", ctx.params().usable_slot_bits());
    let keys = he::keygen(&ctx, 11);

    let mut acc = None;
    for (c, v) in values.iter().enumerate() {
        let slots = pack_lanes(v, &pc, n).unwrap();
        if c == 0 {
            println!("client 0 packed slots: {slots:?}");
        }
        let ct = encrypt(&ctx.encode(&slots).unwrap(), &keys.public, &ctx, c as u64);
        acc = Some(match acc {
            None => ct,
            Some(a) => add_ciphertexts(&a, &ct, &ctx).unwrap(),
        });
    }
    let dec = decrypt(&acc.unwrap(), &keys.secret, &ctx).unwrap();
    let sums = unpack_sum(&dec, &pc, 6, n).unwrap();
    for (i, s) in sums.iter().enumerate() {
        let exact: f64 = values.iter().map(|v| v[i]).sum();
        let q: i64 = values.iter().map(|v| pc.quantize(v[i])).sum();
        println!("lane {i}: quantized sum {s:>5} (expected {q:>5}) -> {:+.4}, exact {exact:+.4}", pc.dequantize(*s));
    }
}
