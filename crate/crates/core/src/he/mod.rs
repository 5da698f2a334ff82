//! Additive-only CKKS-style encryption over Z_q[X]/(X^N + 1).
//!
//! Supports exactly what secure aggregation needs: key generation,
//! canonical-embedding encoding of real vectors at scale Δ, public-key
//! encryption, ciphertext addition and decryption. There is no
//! multiplication, rescaling or rotation.
//!
//! Gradients reach the slots through [`packing`], which quantizes values
//! into fixed-width lanes with guard bits so that several lanes share one
//! slot and client sums never carry into a neighbouring lane.

mod cipher;
mod encoding;
mod keys;
pub mod ntt;
pub mod packing;
mod params;

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub use cipher::{add_ciphertexts, decrypt, encrypt, encrypt_with_rng, Ciphertext, HEADER_BYTES};
pub use encoding::Plaintext;
pub use keys::{keygen, KeyPair, PublicKey, SecretKey};
pub use packing::PackingConfig;
pub use params::{CkksParams, SecurityClaim, SlotModel, MIN_HEADROOM_BITS};

use crate::{Error, Result};
use ntt::NttTables;

/// Instantiated parameters: the prime modulus, NTT twiddles and FFT
/// plans. Immutable and cheap to share behind an `Arc`.
#[derive(Clone)]
pub struct CkksContext {
    params: CkksParams,
    q: u64,
    ntt: NttTables,
    fft_forward: Arc<dyn Fft<f64>>,
    fft_inverse: Arc<dyn Fft<f64>>,
    twist: Vec<Complex64>,
}

impl std::fmt::Debug for CkksContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CkksContext").field("params", &self.params).field("q", &self.q).finish()
    }
}

impl CkksContext {
    pub fn new(params: CkksParams) -> Result<Self> {
        params.validate()?;
        if params.q_bits > 62 {
            return Err(Error::config(format!(
                "a {}-bit modulus is supported for size accounting only; crypto needs q_bits <= 62",
                params.q_bits
            )));
        }
        let n = params.ring_dim;
        let q = ntt::find_ntt_prime(params.q_bits, n)
            .ok_or_else(|| Error::config(format!("no {}-bit NTT prime for N = {n}", params.q_bits)))?;
        let ntt = NttTables::new(q, n).ok_or_else(|| Error::config("failed to build NTT tables"))?;
        let mut planner = FftPlanner::new();
        let fft_forward = planner.plan_fft_forward(n);
        let fft_inverse = planner.plan_fft_inverse(n);
        let twist = (0..n)
            .map(|j| Complex64::from_polar(1.0, std::f64::consts::PI * j as f64 / n as f64))
            .collect();
        Ok(Self { params, q, ntt, fft_forward, fft_inverse, twist })
    }

    pub fn params(&self) -> &CkksParams {
        &self.params
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    pub fn ring_dim(&self) -> usize {
        self.params.ring_dim
    }

    pub fn slot_count(&self) -> usize {
        self.params.slot_count()
    }

    pub fn ntt(&self) -> &NttTables {
        &self.ntt
    }

    /// Centered representative in (-q/2, q/2].
    pub fn to_signed(&self, c: u64) -> i64 {
        if c > self.q / 2 {
            -((self.q - c) as i64)
        } else {
            c as i64
        }
    }

    pub fn from_signed(&self, v: i64) -> u64 {
        v.rem_euclid(self.q as i64) as u64
    }

    pub(crate) fn poly_mul(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        self.ntt.negacyclic_mul(a, b)
    }

    pub(crate) fn poly_add(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        a.iter().zip(b).map(|(x, y)| ntt::add_mod(*x, *y, self.q)).collect()
    }

    /// Fresh-encryption noise bound in coefficient units: six standard
    /// deviations of e*u + e0 + e1*s for ternary u, s and Gaussian errors.
    pub fn fresh_noise_bound(&self) -> f64 {
        let n = self.params.ring_dim as f64;
        6.0 * self.params.noise_stddev * (4.0 * n / 3.0 + 1.0).sqrt()
    }
}

/// ⌈k / (slots × B)⌉ ciphertexts to carry k values, with the slot count
/// per ciphertext given by `slot_model`.
pub fn ciphertext_count(k: u64, params: &CkksParams, pc: &PackingConfig, slot_model: SlotModel) -> u64 {
    let per_ct = slot_model.slots(params.ring_dim) * pc.lanes as u64;
    k.div_ceil(per_ct)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ciphertext_count_reference_example() {
        let p = CkksParams::reference();
        let pc = PackingConfig { lanes: 64, ..PackingConfig::default() };
        assert_eq!(ciphertext_count(6_695_501, &p, &pc, SlotModel::FullRing), 13);
        assert_eq!(ciphertext_count(6_695_501, &p, &pc, SlotModel::HalfRing), 26);
        assert_eq!(ciphertext_count(0, &p, &pc, SlotModel::FullRing), 0);
        assert_eq!(ciphertext_count(524_288, &p, &pc, SlotModel::FullRing), 1);
        assert_eq!(ciphertext_count(524_289, &p, &pc, SlotModel::FullRing), 2);
    }

    #[test]
    fn large_modulus_is_accounting_only() {
        assert!(matches!(CkksContext::new(CkksParams::reference()), Err(Error::Config(_))));
    }

    #[test]
    fn signed_round_trip() {
        let ctx = CkksContext::new(CkksParams::desk()).unwrap();
        for v in [-5i64, 0, 7, -(1 << 50), 1 << 50] {
            assert_eq!(ctx.to_signed(ctx.from_signed(v)), v);
        }
    }
}
