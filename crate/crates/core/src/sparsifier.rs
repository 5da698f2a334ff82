//! Adaptive top-k sparsification with error feedback.
//!
//! Each round a client adds its carried error to the fresh update, finds
//! the k-th largest magnitude of the compensated vector, smooths that
//! cutoff with an exponential moving average, keeps every entry at or
//! above the smoothed threshold and carries the rest into the next round.
//! With k = d (no sparsity) the mask keeps everything regardless of the
//! smoothed threshold.

use serde::{Deserialize, Serialize};

use crate::model::GradientVector;
use crate::{Error, Result};

const PPB: u128 = 1_000_000_000;

/// `floor((1 - s) * d)` evaluated on `s` rounded to nine decimals, so that
/// values such as `s = 0.9` do not lose an element to binary rounding.
pub fn retained_count(d: u64, sparsity: f64) -> u64 {
    let s = sparsity.clamp(0.0, 1.0);
    let s_ppb = (s * PPB as f64).round() as u128;
    ((PPB - s_ppb.min(PPB)) * u128::from(d) / PPB) as u64
}

/// Returns the k-th largest absolute value (k is 1-based) using
/// introselect from the standard library; expected linear time.
pub fn select_kth_magnitude(values: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > values.len() {
        return Err(Error::contract(format!("k = {k} outside 1..={}", values.len())));
    }
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let (_, kth, _) = mags.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    Ok(*kth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsifierConfig {
    /// Fraction of entries zeroed, in [0, 1].
    pub sparsity: f64,
    /// EMA weight on the previous threshold, in (0, 1).
    pub alpha: f64,
    #[serde(default = "yes")]
    pub error_feedback: bool,
    #[serde(default = "yes")]
    pub adaptive_threshold: bool,
}

fn yes() -> bool {
    true
}

impl Default for SparsifierConfig {
    fn default() -> Self {
        Self { sparsity: 0.9, alpha: 0.7, error_feedback: true, adaptive_threshold: true }
    }
}

impl SparsifierConfig {
    pub fn new(sparsity: f64, alpha: f64) -> Result<Self> {
        let cfg = Self { sparsity, alpha, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::config(format!("sparsity {} outside [0, 1]", self.sparsity)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("adaptation rate {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }

    pub fn retained(&self, d: usize) -> usize {
        retained_count(d as u64, self.sparsity) as usize
    }
}

/// Per-client memory carried between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsifierState {
    pub tau: f64,
    pub error: Vec<f64>,
    /// Number of completed `sparsify` calls.
    pub round: u64,
}

impl SparsifierState {
    pub fn new(d: usize) -> Self {
        Self { tau: 0.0, error: vec![0.0; d], round: 0 }
    }

    pub fn error_norm(&self) -> f64 {
        self.error.iter().map(|e| e * e).sum::<f64>().sqrt()
    }
}

/// Dense storage with pruned positions held at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseGradient {
    pub values: Vec<f64>,
    pub nnz: usize,
}

impl SparseGradient {
    pub fn from_dense(values: Vec<f64>) -> Self {
        let nnz = values.iter().filter(|v| **v != 0.0).count();
        Self { values, nnz }
    }

    pub fn dense_dim(&self) -> usize {
        self.values.len()
    }

    /// Positions of the nonzero entries, ascending.
    pub fn indices(&self) -> Vec<u32> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn recount(&mut self) {
        self.nnz = self.values.iter().filter(|v| **v != 0.0).count();
    }
}

/// Diagnostics for one `sparsify` call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundStats {
    pub k: usize,
    pub tau_current: f64,
    pub tau: f64,
    pub nnz: usize,
}

/// One round of adaptive top-k selection. Returns the sparse gradient and
/// the successor state (round counter incremented).
pub fn sparsify(
    gradient: &GradientVector,
    config: &SparsifierConfig,
    state: &SparsifierState,
) -> Result<(SparseGradient, SparsifierState)> {
    sparsify_with_stats(gradient, config, state).map(|(g, s, _)| (g, s))
}

pub fn sparsify_with_stats(
    gradient: &GradientVector,
    config: &SparsifierConfig,
    state: &SparsifierState,
) -> Result<(SparseGradient, SparsifierState, RoundStats)> {
    config.validate()?;
    let d = gradient.len();
    if state.error.len() != d {
        return Err(Error::contract(format!(
            "gradient has length {d}, error memory has length {}",
            state.error.len()
        )));
    }

    let compensated: Vec<f64> = if config.error_feedback {
        gradient.values.iter().zip(&state.error).map(|(g, e)| g + e).collect()
    } else {
        gradient.values.clone()
    };

    let k = config.retained(d);
    let tau_current = if k == 0 { f64::INFINITY } else { select_kth_magnitude(&compensated, k)? };
    let t = state.round + 1;
    let tau = if t == 1 || !config.adaptive_threshold {
        tau_current
    } else {
        config.alpha * state.tau + (1.0 - config.alpha) * tau_current
    };

    let mut kept = compensated.clone();
    let mut error = compensated;
    for (s, e) in kept.iter_mut().zip(error.iter_mut()) {
        if k == d || s.abs() >= tau {
            *e = 0.0;
        } else {
            *s = 0.0;
        }
    }
    if !config.error_feedback {
        error.iter_mut().for_each(|e| *e = 0.0);
    }

    let sparse = SparseGradient::from_dense(kept);
    let stats = RoundStats { k, tau_current, tau, nnz: sparse.nnz };
    Ok((sparse, SparsifierState { tau, error, round: t }, stats))
}
