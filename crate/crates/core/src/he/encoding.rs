//! Canonical-embedding encoder. A real vector z of length ≤ N/2 is placed
//! on the odd powers ζ^(2k+1) of the primitive 2N-th complex root (with
//! conjugates on the mirrored roots), interpolated to a real polynomial
//! and scaled by Δ before rounding to integer coefficients.

use rustfft::num_complex::Complex64;

use super::CkksContext;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Plaintext {
    pub(crate) coeffs: Vec<u64>,
    pub scale_log2: u32,
    /// Upper bound on |coefficient| before reduction mod q.
    pub(crate) coeff_bound: f64,
    pub(crate) len: usize,
}

impl Plaintext {
    /// Number of meaningful slots.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl CkksContext {
    pub fn encode(&self, values: &[f64]) -> Result<Plaintext> {
        self.encode_at(values, self.params().scale_log2)
    }

    pub(crate) fn encode_at(&self, values: &[f64], scale_log2: u32) -> Result<Plaintext> {
        let n = self.ring_dim();
        let half = n / 2;
        if values.len() > half {
            return Err(Error::contract(format!("{} values exceed {half} slots", values.len())));
        }
        let scale = 2f64.powi(scale_log2 as i32);
        let limit = self.modulus() as f64 / (2.0 * scale);
        let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !max_abs.is_finite() || max_abs >= limit {
            return Err(Error::EncodingOverflow { value: max_abs, limit });
        }

        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (k, v) in values.iter().enumerate() {
            buf[k] = Complex64::new(*v, 0.0);
            buf[n - 1 - k] = Complex64::new(*v, 0.0);
        }
        self.fft_forward.process(&mut buf);
        let inv_n = 1.0 / n as f64;
        let coeffs = buf
            .iter()
            .zip(&self.twist)
            .map(|(y, tw)| {
                let m = (y * tw.conj()).re * inv_n;
                self.from_signed((m * scale).round() as i64)
            })
            .collect();
        Ok(Plaintext { coeffs, scale_log2, coeff_bound: max_abs * scale + 0.5, len: values.len() })
    }

    /// Evaluates centered coefficients on the slot roots; returns N/2 reals.
    pub(crate) fn decode_coeffs(&self, coeffs: &[u64], scale_log2: u32) -> Vec<f64> {
        let n = self.ring_dim();
        let inv_scale = 2f64.powi(-(scale_log2 as i32));
        let mut buf: Vec<Complex64> = coeffs
            .iter()
            .zip(&self.twist)
            .map(|(c, tw)| tw * (self.to_signed(*c) as f64 * inv_scale))
            .collect();
        self.fft_inverse.process(&mut buf);
        buf[..n / 2].iter().map(|z| z.re).collect()
    }

    pub fn decode(&self, pt: &Plaintext) -> Vec<f64> {
        self.decode_coeffs(&pt.coeffs, pt.scale_log2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::CkksParams;
    use rand::Rng;

    #[test]
    fn unit_value_round_trip() {
        let ctx = CkksContext::new(CkksParams::desk()).unwrap();
        let pt = ctx.encode(&[1.0]).unwrap();
        let out = ctx.decode(&pt);
        assert!((out[0] - 1.0).abs() <= 2f64.powi(-28));
        assert!(out[1..].iter().all(|v| v.abs() <= 2f64.powi(-28)));
    }

    #[test]
    fn random_round_trip_within_scale_tolerance() {
        let ctx = CkksContext::new(CkksParams::desk()).unwrap();
        let mut rng = crate::rng::rng_from(3);
        let v: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = ctx.decode(&ctx.encode(&v).unwrap());
        let err = v.iter().zip(&out).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 2f64.powi(-(40 - 12)), "err {err}");
        assert!(err <= 1e-9);
    }

    #[test]
    fn overflow_rejected() {
        let ctx = CkksContext::new(CkksParams::desk()).unwrap();
        let limit = ctx.modulus() as f64 / 2f64.powi(41);
        assert!(matches!(ctx.encode(&[limit * 1.01]), Err(Error::EncodingOverflow { .. })));
        assert!(matches!(ctx.encode(&vec![0.0; 513]), Err(Error::Contract(_))));
    }
}
