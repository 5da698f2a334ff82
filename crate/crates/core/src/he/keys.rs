use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::CkksContext;
use crate::rng::rng_from;

/// Ternary secret s with coefficients in {-1, 0, 1}, stored mod q.
#[derive(Clone)]
pub struct SecretKey {
    pub(crate) s: Vec<u64>,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// RLWE pair (b, a) with b = -a*s + e.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicKey {
    pub(crate) b: Vec<u64>,
    pub(crate) a: Vec<u64>,
}

impl PublicKey {
    pub fn b(&self) -> &[u64] {
        &self.b
    }

    pub fn a(&self) -> &[u64] {
        &self.a
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub secret: SecretKey,
    pub public: PublicKey,
}

impl SecretKey {
    /// Coefficients as signed integers.
    pub fn coefficients(&self, ctx: &CkksContext) -> Vec<i64> {
        self.s.iter().map(|c| ctx.to_signed(*c)).collect()
    }
}

pub(crate) fn sample_ternary<R: Rng>(ctx: &CkksContext, rng: &mut R) -> Vec<u64> {
    (0..ctx.ring_dim()).map(|_| ctx.from_signed(rng.random_range(-1..=1))).collect()
}

/// Rounded Gaussian truncated at six standard deviations.
pub(crate) fn sample_error<R: Rng>(ctx: &CkksContext, rng: &mut R) -> Vec<u64> {
    let sigma = ctx.params().noise_stddev;
    let normal = Normal::new(0.0, sigma).expect("validated stddev");
    let cap = (6.0 * sigma).floor();
    (0..ctx.ring_dim())
        .map(|_| loop {
            let x: f64 = normal.sample(rng).round();
            if x.abs() <= cap {
                break ctx.from_signed(x as i64);
            }
        })
        .collect()
}

pub(crate) fn sample_uniform<R: Rng>(ctx: &CkksContext, rng: &mut R) -> Vec<u64> {
    let q = ctx.modulus();
    (0..ctx.ring_dim()).map(|_| rng.random_range(0..q)).collect()
}

pub fn keygen(ctx: &CkksContext, seed: u64) -> KeyPair {
    let mut rng = rng_from(seed);
    let s = sample_ternary(ctx, &mut rng);
    let a = sample_uniform(ctx, &mut rng);
    let e = sample_error(ctx, &mut rng);
    let q = ctx.modulus();
    let a_s = ctx.poly_mul(&a, &s);
    let b = a_s.iter().zip(&e).map(|(x, err)| super::ntt::sub_mod(*err, *x, q)).collect();
    KeyPair { secret: SecretKey { s }, public: PublicKey { b, a } }
}
