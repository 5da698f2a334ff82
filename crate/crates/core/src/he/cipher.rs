use rand::Rng;

use super::keys::{sample_error, sample_ternary, PublicKey, SecretKey};
use super::{CkksContext, Plaintext, SlotModel};
use crate::rng::rng_from;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"RLWE";
const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Ciphertext {
    pub c0: Vec<u64>,
    pub c1: Vec<u64>,
    pub scale_log2: u32,
    pub level: u32,
    pub slot_count: usize,
    pub q_bits: u32,
    pub slot_model: SlotModel,
    /// Tracked bound on |message coefficient| (coefficient units).
    pub message_bound: f64,
    /// Tracked high-probability bound on |noise coefficient|.
    pub noise_bound: f64,
}

impl Ciphertext {
    pub fn ring_dim(&self) -> usize {
        self.c0.len()
    }

    pub fn scale(&self) -> f64 {
        2f64.powi(self.scale_log2 as i32)
    }

    /// Payload size, 2·N·q_bits/8 bytes.
    pub fn payload_bytes(&self) -> usize {
        2 * self.ring_dim() * self.q_bits as usize / 8
    }

    /// Header (32 bytes: magic, version, slot model, N, q_bits,
    /// scale_log2, level, tracked bounds) followed by c0 and c1 bit-packed
    /// little-endian at `q_bits` per coefficient.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.payload_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.slot_model.tag());
        out.push(0);
        out.extend_from_slice(&(self.ring_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.q_bits as u16).to_le_bytes());
        out.extend_from_slice(&(self.scale_log2 as u16).to_le_bytes());
        out.extend_from_slice(&(self.level as u16).to_le_bytes());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(self.noise_bound.log2() as f32).to_le_bytes());
        out.extend_from_slice(&(self.message_bound.max(1.0).log2() as f32).to_le_bytes());
        out.extend_from_slice(&[0; 4]);
        debug_assert_eq!(out.len(), HEADER_BYTES);
        let mut bits = BitWriter::new(&mut out);
        for c in self.c0.iter().chain(&self.c1) {
            bits.write(*c, self.q_bits);
        }
        bits.finish();
        out
    }

    pub fn from_bytes(bytes: &[u8], ctx: &CkksContext) -> Result<Self> {
        if bytes.len() < HEADER_BYTES || &bytes[..4] != MAGIC {
            return Err(Error::Malformed("missing header".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let f32_at = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if u16_at(4) != VERSION {
            return Err(Error::Malformed(format!("unsupported version {}", u16_at(4))));
        }
        let slot_model =
            SlotModel::from_tag(bytes[6]).ok_or_else(|| Error::Malformed("bad slot model".into()))?;
        let n = u32_at(8) as usize;
        let q_bits = u32::from(u16_at(12));
        if n != ctx.ring_dim() || q_bits != ctx.params().q_bits {
            return Err(Error::Malformed(format!(
                "ciphertext for N={n}, q_bits={q_bits} does not match context"
            )));
        }
        let payload = 2 * n * q_bits as usize / 8;
        if bytes.len() != HEADER_BYTES + payload {
            return Err(Error::Malformed(format!(
                "expected {} bytes, got {}",
                HEADER_BYTES + payload,
                bytes.len()
            )));
        }
        let mut reader = BitReader::new(&bytes[HEADER_BYTES..]);
        let mut coeffs = Vec::with_capacity(2 * n);
        for _ in 0..2 * n {
            let c = reader.read(q_bits);
            if c >= ctx.modulus() {
                return Err(Error::Malformed("coefficient not reduced mod q".into()));
            }
            coeffs.push(c);
        }
        let c1 = coeffs.split_off(n);
        Ok(Self {
            c0: coeffs,
            c1,
            scale_log2: u32::from(u16_at(14)),
            level: u32::from(u16_at(16)),
            slot_count: n / 2,
            q_bits,
            slot_model,
            noise_bound: 2f64.powf(f64::from(f32_at(20))),
            message_bound: 2f64.powf(f64::from(f32_at(24))),
        })
    }
}

struct BitWriter<'a> {
    out: &'a mut Vec<u8>,
    acc: u128,
    nbits: u32,
}

impl<'a> BitWriter<'a> {
    fn new(out: &'a mut Vec<u8>) -> Self {
        Self { out, acc: 0, nbits: 0 }
    }

    fn write(&mut self, value: u64, bits: u32) {
        self.acc |= u128::from(value) << self.nbits;
        self.nbits += bits;
        while self.nbits >= 8 {
            self.out.push(self.acc as u8);
            self.acc >>= 8;
            self.nbits -= 8;
        }
    }

    fn finish(self) {
        if self.nbits > 0 {
            self.out.push(self.acc as u8);
        }
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u128,
    nbits: u32,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0, acc: 0, nbits: 0 }
    }

    fn read(&mut self, bits: u32) -> u64 {
        while self.nbits < bits {
            let byte = self.data.get(self.pos).copied().unwrap_or(0);
            self.acc |= u128::from(byte) << self.nbits;
            self.pos += 1;
            self.nbits += 8;
        }
        let v = (self.acc & ((1u128 << bits) - 1)) as u64;
        self.acc >>= bits;
        self.nbits -= bits;
        v
    }
}

/// Public-key encryption with randomness derived from `seed`.
pub fn encrypt(pt: &Plaintext, pk: &PublicKey, ctx: &CkksContext, seed: u64) -> Ciphertext {
    encrypt_with_rng(pt, pk, ctx, &mut rng_from(seed))
}

/// As [`encrypt`], drawing randomness from a caller-supplied generator
/// (e.g. an OS-entropy RNG outside of tests).
pub fn encrypt_with_rng<R: Rng>(pt: &Plaintext, pk: &PublicKey, ctx: &CkksContext, rng: &mut R) -> Ciphertext {
    let u = sample_ternary(ctx, rng);
    let e0 = sample_error(ctx, rng);
    let e1 = sample_error(ctx, rng);
    let c0 = ctx.poly_add(&ctx.poly_add(&ctx.poly_mul(&pk.b, &u), &e0), &pt.coeffs);
    let c1 = ctx.poly_add(&ctx.poly_mul(&pk.a, &u), &e1);
    let p = ctx.params();
    Ciphertext {
        c0,
        c1,
        scale_log2: pt.scale_log2,
        level: 0,
        slot_count: p.slot_count(),
        q_bits: p.q_bits,
        slot_model: p.slot_model,
        message_bound: pt.coeff_bound,
        noise_bound: ctx.fresh_noise_bound(),
    }
}

/// Slotwise sum. Ciphertexts at different scales or levels cannot be
/// added and produce [`Error::ScaleMismatch`].
pub fn add_ciphertexts(a: &Ciphertext, b: &Ciphertext, ctx: &CkksContext) -> Result<Ciphertext> {
    if a.ring_dim() != b.ring_dim() || a.q_bits != b.q_bits || a.ring_dim() != ctx.ring_dim() {
        return Err(Error::ScaleMismatch(format!(
            "parameter mismatch: N {} vs {}, q_bits {} vs {}",
            a.ring_dim(),
            b.ring_dim(),
            a.q_bits,
            b.q_bits
        )));
    }
    if a.scale_log2 != b.scale_log2 {
        return Err(Error::ScaleMismatch(format!(
            "scale 2^{} vs 2^{}",
            a.scale_log2, b.scale_log2
        )));
    }
    if a.level != b.level {
        return Err(Error::ScaleMismatch(format!("level {} vs {}", a.level, b.level)));
    }
    Ok(Ciphertext {
        c0: ctx.poly_add(&a.c0, &b.c0),
        c1: ctx.poly_add(&a.c1, &b.c1),
        message_bound: a.message_bound + b.message_bound,
        noise_bound: a.noise_bound + b.noise_bound,
        ..a.clone()
    })
}

/// Computes c0 + c1·s and decodes N/2 slots. Fails when the tracked
/// message-plus-noise bound could have wrapped modulo q, or when the
/// noise bound reaches Δ/2.
pub fn decrypt(ct: &Ciphertext, sk: &SecretKey, ctx: &CkksContext) -> Result<Vec<f64>> {
    if ct.ring_dim() != ctx.ring_dim() || ct.q_bits != ctx.params().q_bits {
        return Err(Error::ScaleMismatch("ciphertext does not match context parameters".into()));
    }
    let half_q = ctx.modulus() as f64 / 2.0;
    let total = ct.message_bound + ct.noise_bound;
    if total >= half_q || ct.noise_bound >= ct.scale() / 2.0 {
        return Err(Error::DecryptionOverflow { bits: total.max(ct.noise_bound).log2() });
    }
    let m = ctx.poly_add(&ct.c0, &ctx.poly_mul(&ct.c1, &sk.s));
    Ok(ctx.decode_coeffs(&m, ct.scale_log2))
}
