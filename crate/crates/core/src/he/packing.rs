//! Fixed-point lane packing.
//!
//! Each value is clipped to `[-clip, clip]` and quantized to a signed
//! `lane_bits` integer q ∈ [-2^(b-1), 2^(b-1) - 1] with step
//! `clip / 2^(b-1)`. The code `q + 2^(b-1)` is non-negative and `B` codes
//! share one slot through base-2^(lane_bits + guard_bits) positional
//! encoding, first value most significant. Summing at most 2^guard_bits
//! packed vectors cannot carry between lanes, so unpacking recovers the
//! lane-wise code sums exactly.

use serde::{Deserialize, Serialize};

use super::CkksParams;
use crate::{Error, Result};

/// Largest integer an f64 slot value represents exactly is 2^53.
const F64_EXACT_BITS: u32 = 52;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackingConfig {
    /// Lanes per slot (B).
    pub lanes: u32,
    pub lane_bits: u32,
    pub guard_bits: u32,
    pub clip_range: f64,
}

impl Default for PackingConfig {
    fn default() -> Self {
        Self { lanes: 1, lane_bits: 8, guard_bits: 8, clip_range: 1.0 }
    }
}

impl PackingConfig {
    pub fn lane_width(&self) -> u32 {
        self.lane_bits + self.guard_bits
    }

    pub fn packed_bits(&self) -> u32 {
        self.lanes * self.lane_width()
    }

    pub fn offset(&self) -> i64 {
        1i64 << (self.lane_bits - 1)
    }

    /// Value of one quantization step.
    pub fn step(&self) -> f64 {
        self.clip_range / self.offset() as f64
    }

    pub fn slots_for(&self, len: usize) -> usize {
        len.div_ceil(self.lanes as usize)
    }

    /// Checks the lane layout against a client count; every packed slot
    /// must also fit an f64 exactly.
    pub fn validate(&self, n_clients: usize) -> Result<()> {
        if self.lanes == 0 {
            return Err(Error::config("lanes per slot must be >= 1"));
        }
        if !(2..=32).contains(&self.lane_bits) {
            return Err(Error::config(format!("lane_bits {} outside 2..=32", self.lane_bits)));
        }
        if !(self.clip_range > 0.0 && self.clip_range.is_finite()) {
            return Err(Error::config("clip_range must be positive"));
        }
        let needed = guard_bits_for(n_clients);
        if self.guard_bits < needed {
            return Err(Error::config(format!(
                "{} guard bits cannot absorb {} summands (need {needed})",
                self.guard_bits, n_clients
            )));
        }
        if self.packed_bits() > F64_EXACT_BITS {
            return Err(Error::config(format!(
                "{} lanes x {} bits = {} bits exceed the {F64_EXACT_BITS}-bit exact slot range",
                self.lanes,
                self.lane_width(),
                self.packed_bits()
            )));
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the slot capacity left by the
    /// encryption parameters at scale Δ.
    pub fn validate_for(&self, params: &CkksParams, n_clients: usize) -> Result<()> {
        self.validate(n_clients)?;
        let usable = params.usable_slot_bits();
        if self.packed_bits() > usable {
            return Err(Error::config(format!(
                "{} packed bits exceed the {usable} usable bits of a slot at q_bits={}, scale 2^{}",
                self.packed_bits(),
                params.q_bits,
                params.scale_log2
            )));
        }
        Ok(())
    }

    /// Signed quantized value of `v`.
    pub fn quantize(&self, v: f64) -> i64 {
        let off = self.offset();
        let c = v.clamp(-self.clip_range, self.clip_range);
        ((c / self.step()).round() as i64).clamp(-off, off - 1)
    }

    pub fn dequantize(&self, q: i64) -> f64 {
        q as f64 * self.step()
    }

    /// Non-negative lane code of `v`.
    pub fn code(&self, v: f64) -> u64 {
        (self.quantize(v) + self.offset()) as u64
    }
}

/// ⌈log2 n⌉ guard bits absorb n summands.
pub fn guard_bits_for(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Positional encoding of lane codes, first code most significant. A
/// short final group is padded with zero codes.
pub fn pack_codes(codes: &[u64], pc: &PackingConfig) -> Vec<u64> {
    let w = pc.lane_width();
    let b = pc.lanes as usize;
    codes
        .chunks(b)
        .map(|group| {
            let mut packed = 0u64;
            for j in 0..b {
                packed = (packed << w) | group.get(j).copied().unwrap_or(0);
            }
            packed
        })
        .collect()
}

/// Splits packed (possibly summed) slot integers back into `len` lane
/// values.
pub fn unpack_codes(packed: &[u64], pc: &PackingConfig, len: usize) -> Vec<u64> {
    let w = pc.lane_width();
    let b = pc.lanes as usize;
    let mask = (1u64 << w) - 1;
    let mut out = Vec::with_capacity(packed.len() * b);
    for &p in packed {
        for j in 0..b {
            out.push((p >> (w * (b - 1 - j) as u32)) & mask);
        }
    }
    out.truncate(len);
    out
}

/// Clips, quantizes and packs `values`; one f64 per packed slot.
pub fn pack_lanes(values: &[f64], pc: &PackingConfig, n_clients: usize) -> Result<Vec<f64>> {
    pc.validate(n_clients)?;
    let codes: Vec<u64> = values.iter().map(|v| pc.code(*v)).collect();
    Ok(pack_codes(&codes, pc).into_iter().map(|p| p as f64).collect())
}

/// Rounds decrypted slot values to integers and recovers the lane-wise
/// sum of signed quantized values over `summands` packed vectors.
pub fn unpack_sum(slots: &[f64], pc: &PackingConfig, len: usize, summands: usize) -> Result<Vec<i64>> {
    if slots.len() < pc.slots_for(len) {
        return Err(Error::contract(format!(
            "{} slots cannot hold {len} lanes of {}",
            slots.len(),
            pc.lanes
        )));
    }
    let limit = 2f64.powi(pc.packed_bits() as i32);
    let mut packed = Vec::with_capacity(slots.len());
    for &s in slots {
        let r = s.round();
        if !(0.0..limit).contains(&r) {
            return Err(Error::DecryptionOverflow { bits: r.abs().max(1.0).log2() });
        }
        packed.push(r as u64);
    }
    let offset_total = pc.offset() * summands as i64;
    Ok(unpack_codes(&packed, pc, len).into_iter().map(|c| c as i64 - offset_total).collect())
}
