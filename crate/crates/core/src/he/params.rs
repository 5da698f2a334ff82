use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How many effective slots one ciphertext is credited with when counting
/// ciphertexts. Standard CKKS packs N/2 complex slots; the headline
/// communication arithmetic credits a full N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SlotModel {
    #[default]
    FullRing,
    HalfRing,
}

impl SlotModel {
    pub fn slots(self, ring_dim: usize) -> u64 {
        match self {
            SlotModel::FullRing => ring_dim as u64,
            SlotModel::HalfRing => ring_dim as u64 / 2,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            SlotModel::FullRing => 0,
            SlotModel::HalfRing => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(SlotModel::FullRing),
            1 => Some(SlotModel::HalfRing),
            _ => None,
        }
    }
}

/// Security level a parameter set is claimed to reach. Desk parameters
/// (small N, one 61-bit prime) are for testing only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecurityClaim {
    #[serde(rename = "claimed_128bit")]
    Claimed128Bit,
    DeskInsecure,
}

impl std::fmt::Display for SecurityClaim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SecurityClaim::Claimed128Bit => f.write_str("claimed_128bit (not verified here)"),
            SecurityClaim::DeskInsecure => f.write_str("desk_insecure (NOT secure; testing only)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CkksParams {
    pub ring_dim: usize,
    /// Total modulus bits. Only single-prime moduli up to 62 bits can be
    /// instantiated; larger values are accepted for size accounting.
    pub q_bits: u32,
    pub scale_log2: u32,
    pub noise_stddev: f64,
    #[serde(default)]
    pub slot_model: SlotModel,
    pub security: SecurityClaim,
}

/// Minimum gap between `q_bits` and `scale_log2`.
pub const MIN_HEADROOM_BITS: u32 = 20;

impl CkksParams {
    /// N = 8192, 240-bit modulus, scale 2^40.
    pub fn reference() -> Self {
        Self {
            ring_dim: 8192,
            q_bits: 240,
            scale_log2: 40,
            noise_stddev: 3.2,
            slot_model: SlotModel::FullRing,
            security: SecurityClaim::Claimed128Bit,
        }
    }

    /// N = 1024, one 61-bit prime, scale 2^40: real-valued slots with
    /// ~1e-8 round-trip error.
    pub fn desk() -> Self {
        Self {
            ring_dim: 1024,
            q_bits: 61,
            scale_log2: 40,
            noise_stddev: 3.2,
            slot_model: SlotModel::FullRing,
            security: SecurityClaim::DeskInsecure,
        }
    }

    /// Desk ring with scale 2^24, leaving 35 bits of integer headroom per
    /// slot for lane-packed values.
    pub fn desk_packing() -> Self {
        Self { scale_log2: 24, ..Self::desk() }
    }

    pub fn slot_count(&self) -> usize {
        self.ring_dim / 2
    }

    pub fn scale(&self) -> f64 {
        2f64.powi(self.scale_log2 as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.ring_dim.is_power_of_two() || self.ring_dim < 4 {
            return Err(Error::config(format!("ring dimension {} is not a power of two >= 4", self.ring_dim)));
        }
        if self.q_bits < self.scale_log2 + MIN_HEADROOM_BITS {
            return Err(Error::config(format!(
                "q_bits {} leaves less than {MIN_HEADROOM_BITS} bits above scale 2^{}",
                self.q_bits, self.scale_log2
            )));
        }
        if !(self.noise_stddev > 0.0 && self.noise_stddev.is_finite()) {
            return Err(Error::config("noise_stddev must be positive"));
        }
        Ok(())
    }

    /// Integer bits available to a packed slot value: one sign bit and one
    /// bit of margin below q/2, capped by the f64 mantissa used in encoding.
    pub fn usable_slot_bits(&self) -> u32 {
        self.q_bits.saturating_sub(self.scale_log2 + 2).min(52)
    }

    /// Bytes of one serialized ciphertext payload: two ring elements of N
    /// coefficients at `q_bits` each.
    pub fn ciphertext_bytes(&self) -> u64 {
        2 * self.ring_dim as u64 * u64::from(self.q_bits) / 8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ciphertext_size_formula() {
        assert_eq!(CkksParams::reference().ciphertext_bytes(), 491_520);
        assert_eq!(CkksParams::desk().ciphertext_bytes(), 2 * 1024 * 61 / 8);
    }

    #[test]
    fn validation() {
        assert!(CkksParams::reference().validate().is_ok());
        assert!(CkksParams::desk().validate().is_ok());
        assert!(CkksParams { ring_dim: 1000, ..CkksParams::desk() }.validate().is_err());
        assert!(CkksParams { scale_log2: 50, ..CkksParams::desk() }.validate().is_err());
    }

    #[test]
    fn usable_bits() {
        assert_eq!(CkksParams::desk().usable_slot_bits(), 19);
        assert_eq!(CkksParams::desk_packing().usable_slot_bits(), 35);
    }
}
