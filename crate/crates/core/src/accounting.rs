//! Closed-form communication accounting.
//!
//! All counts are integers. Megabyte figures are kept as exact byte counts
//! and only divided by 1024² for display, rounded half-up to the precision
//! the figures are usually quoted at.

use serde::{Deserialize, Serialize};

use crate::he::{ciphertext_count, CkksParams, PackingConfig, SlotModel};
use crate::sparsifier::retained_count;

const MIB: u64 = 1024 * 1024;
/// Bytes per plaintext f32 gradient value.
pub const PLAIN_VALUE_BYTES: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommBreakdown {
    pub d: u64,
    pub s: f64,
    pub n_clients: u64,
    pub lanes: u32,
    pub slot_model: SlotModel,
    pub k: u64,
    pub slots_effective: u64,
    pub ciphertexts: u64,
    pub ciphertext_bytes: u64,
    pub per_client_bytes: u64,
    pub baseline_per_client_bytes: u64,
    pub per_client_mb: f64,
    pub baseline_per_client_mb: f64,
    pub total_mb: f64,
    pub baseline_total_mb: f64,
    /// (baseline − encrypted) / baseline on exact byte counts.
    pub reduction_fraction: f64,
    /// Estimated varint delta-coded index stream; never folded into the
    /// ciphertext figures.
    pub index_overhead_bytes: u64,
}

impl CommBreakdown {
    pub fn ciphertext_mb(&self) -> f64 {
        self.ciphertext_bytes as f64 / MIB as f64
    }

    pub fn compression_ratio(&self) -> f64 {
        self.baseline_per_client_bytes as f64 / self.per_client_bytes.max(1) as f64
    }

    /// The five-step derivation as printable lines.
    pub fn steps(&self) -> Vec<String> {
        vec![
            format!("step 1  sparse parameters   k = floor((1 - {}) x {}) = {}", self.s, self.d, self.k),
            format!("step 2  effective slots     {} x {} = {}", self.slots_effective / self.lanes as u64, self.lanes, self.slots_effective),
            format!("step 3  ciphertexts         ceil({} / {}) = {}", self.k, self.slots_effective, self.ciphertexts),
            format!("step 4  ciphertext size     {} bytes = {} MB", self.ciphertext_bytes, mb_display(self.ciphertext_bytes, 2)),
            format!("step 5  per client          {} x {} bytes = {} MB", self.ciphertexts, self.ciphertext_bytes, mb_display(self.per_client_bytes, 1)),
            format!("baseline per client         {} x {} bytes = {} MB", self.d, PLAIN_VALUE_BYTES, mb_display(self.baseline_per_client_bytes, 1)),
            format!("reduction                   {}%", percent_display(self.reduction_fraction, 1)),
            format!(
                "{} clients                   {} MB -> {} MB ({:.0}x)",
                self.n_clients,
                mb_display(self.baseline_per_client_bytes * self.n_clients, 0),
                mb_display(self.per_client_bytes * self.n_clients, 1),
                self.compression_ratio()
            ),
        ]
    }
}

/// Bytes shown in MiB with `decimals` places, rounded half-up in integer
/// arithmetic.
pub fn mb_display(bytes: u64, decimals: u32) -> String {
    let scale = 10u128.pow(decimals);
    let num = bytes as u128 * scale;
    let den = MIB as u128;
    let r = (2 * num + den) / (2 * den);
    if decimals == 0 {
        return r.to_string();
    }
    format!("{}.{:0width$}", r / scale, r % scale, width = decimals as usize)
}

pub fn percent_display(fraction: f64, decimals: usize) -> String {
    format!("{:.*}", decimals, fraction * 100.0)
}

/// Length in bytes of the LEB128 varint of `v`.
pub fn varint_len(v: u64) -> u64 {
    (64 - v.max(1).leading_zeros() as u64).div_ceil(7)
}

/// Exact size of a delta-coded index list (first index, then gaps).
pub fn index_stream_bytes(sorted: &[u32]) -> u64 {
    let mut prev = 0u64;
    let mut total = 0;
    for (i, &ix) in sorted.iter().enumerate() {
        let gap = if i == 0 { ix as u64 } else { ix as u64 - prev };
        total += varint_len(gap);
        prev = ix as u64;
    }
    total
}

/// Index overhead estimate for k indices spread evenly over d positions.
pub fn index_overhead_estimate(d: u64, k: u64) -> u64 {
    if k == 0 {
        return 0;
    }
    k * varint_len(d.div_ceil(k))
}

pub fn communication_breakdown(
    d: u64,
    s: f64,
    n_clients: u64,
    params: &CkksParams,
    pc: &PackingConfig,
    slot_model: SlotModel,
) -> CommBreakdown {
    let k = retained_count(d, s);
    let slots_effective = slot_model.slots(params.ring_dim) * pc.lanes as u64;
    let ciphertexts = ciphertext_count(k, params, pc, slot_model);
    let ciphertext_bytes = params.ciphertext_bytes();
    let per_client_bytes = ciphertexts * ciphertext_bytes;
    let baseline = d * PLAIN_VALUE_BYTES;
    let mb = |b: u64| b as f64 / MIB as f64;
    let reduction_fraction = if baseline == 0 {
        0.0
    } else {
        (baseline as f64 - per_client_bytes as f64) / baseline as f64
    };
    CommBreakdown {
        d,
        s,
        n_clients,
        lanes: pc.lanes,
        slot_model,
        k,
        slots_effective,
        ciphertexts,
        ciphertext_bytes,
        per_client_bytes,
        baseline_per_client_bytes: baseline,
        per_client_mb: mb(per_client_bytes),
        baseline_per_client_mb: mb(baseline),
        total_mb: mb(per_client_bytes * n_clients),
        baseline_total_mb: mb(baseline * n_clients),
        reduction_fraction,
        index_overhead_bytes: index_overhead_estimate(d, k),
    }
}

/// Encodings that could stand behind an "HE without sparsity" figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeOnlyModes {
    /// s = 0 with the same lane packing.
    pub packed: CommBreakdown,
    /// s = 0, one value per slot.
    pub unpacked: CommBreakdown,
    /// Five times the plaintext total.
    pub expansion_5x_total_mb: f64,
    /// Reference figure being matched, in MB for all clients.
    pub reference_total_mb: f64,
    /// Name of the mode whose total is closest to the reference.
    pub closest: String,
}

pub fn he_only_modes(
    d: u64,
    n_clients: u64,
    params: &CkksParams,
    pc: &PackingConfig,
    slot_model: SlotModel,
    reference_total_mb: f64,
) -> HeOnlyModes {
    let packed = communication_breakdown(d, 0.0, n_clients, params, pc, slot_model);
    let one_lane = PackingConfig { lanes: 1, ..*pc };
    let unpacked = communication_breakdown(d, 0.0, n_clients, params, &one_lane, slot_model);
    let expansion = 5.0 * packed.baseline_total_mb;
    let candidates = [("packed", packed.total_mb), ("unpacked", unpacked.total_mb), ("5x_expansion", expansion)];
    let closest = candidates
        .iter()
        .min_by(|a, b| (a.1 - reference_total_mb).abs().total_cmp(&(b.1 - reference_total_mb).abs()))
        .map(|c| c.0.to_string())
        .unwrap_or_default();
    HeOnlyModes { packed, unpacked, expansion_5x_total_mb: expansion, reference_total_mb, closest }
}

/// The reference model and packing used by the headline figures:
/// d = 66,955,010, s = 0.9, N = 8192, B = 64, 240-bit modulus.
pub fn reference_breakdown(slot_model: SlotModel) -> CommBreakdown {
    reference_breakdown_for(REFERENCE_D, 0.9, 5, slot_model)
}

/// Same parameters (N = 8192, 64 values per slot) for another model size,
/// sparsity or client count.
pub fn reference_breakdown_for(d: u64, sparsity: f64, n_clients: u64, slot_model: SlotModel) -> CommBreakdown {
    let pc = PackingConfig { lanes: 64, ..PackingConfig::default() };
    communication_breakdown(d, sparsity, n_clients, &CkksParams::reference(), &pc, slot_model)
}

pub const REFERENCE_D: u64 = 66_955_010;
/// Five-client total quoted in the results table, next to the derived
/// 30.5 MB.
pub const TABLE_TOTAL_MB: f64 = 32.0;
pub const TABLE_HE_ONLY_TOTAL_MB: f64 = 6385.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_figures() {
        let b = reference_breakdown(SlotModel::FullRing);
        assert_eq!(b.k, 6_695_501);
        assert_eq!(b.slots_effective, 524_288);
        assert_eq!(b.ciphertexts, 13);
        assert_eq!(b.ciphertext_bytes, 491_520);
        assert_eq!(mb_display(b.ciphertext_bytes, 2), "0.47");
        assert_eq!(mb_display(b.per_client_bytes, 1), "6.1");
        assert_eq!(mb_display(b.baseline_per_client_bytes, 1), "255.4");
        assert_eq!(percent_display(b.reduction_fraction, 1), "97.6");
        assert_eq!(mb_display(b.per_client_bytes * 5, 1), "30.5");
        assert_eq!(mb_display(b.baseline_per_client_bytes * 5, 0), "1277");
        assert_eq!(b.compression_ratio().round(), 42.0);
    }

    #[test]
    fn standard_slot_model_doubles_ciphertexts() {
        let b = reference_breakdown(SlotModel::HalfRing);
        assert_eq!(b.ciphertexts, 26);
        assert_eq!(mb_display(b.per_client_bytes, 1), "12.2");
    }

    #[test]
    fn no_sparsity() {
        let pc = PackingConfig { lanes: 64, ..PackingConfig::default() };
        let b = communication_breakdown(REFERENCE_D, 0.0, 5, &CkksParams::reference(), &pc, SlotModel::FullRing);
        assert_eq!(b.k, REFERENCE_D);
        assert_eq!(b.ciphertexts, REFERENCE_D.div_ceil(524_288));
    }

    #[test]
    fn he_only_candidates() {
        let pc = PackingConfig { lanes: 64, ..PackingConfig::default() };
        let m = he_only_modes(REFERENCE_D, 5, &CkksParams::reference(), &pc, SlotModel::FullRing, TABLE_HE_ONLY_TOTAL_MB);
        assert_eq!(m.packed.ciphertexts, 128);
        assert_eq!(m.unpacked.ciphertexts, 8174);
        assert_eq!(m.closest, "5x_expansion");
    }

    #[test]
    fn varints() {
        assert_eq!(varint_len(0), 1);
        assert_eq!(varint_len(127), 1);
        assert_eq!(varint_len(128), 2);
        assert_eq!(index_stream_bytes(&[3, 200, 201]), 1 + 2 + 1);
        assert_eq!(index_overhead_estimate(100, 10), 10);
        assert_eq!(index_overhead_estimate(100, 0), 0);
    }
}
