//! Gaussian mechanism on sparse updates and its (ε, δ) accounting.
//!
//! The round bound charged per experiment is
//!
//! ```text
//! ε ≤ (1 − s) · [ Δ₂·√(2T·log(1/δ)) / σ  +  Δ₂²·T / (2σ²) ]
//! ```
//!
//! evaluated under an explicit log base. A second variant keeps the
//! `(1 − s)²·Δ₂²·T/σ²` quadratic term obtained before simplification.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_from;
use crate::sparsifier::SparseGradient;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LogConvention {
    #[default]
    Natural,
    Base10,
}

impl LogConvention {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogConvention::Natural => x.ln(),
            LogConvention::Base10 => x.log10(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// `(1-s)[Δ√(2T log 1/δ)/σ + Δ²T/(2σ²)]`
    #[default]
    Statement,
    /// `(1-s)Δ√(2T log 1/δ)/σ + (1-s)²Δ²T/σ²`
    Derivation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// L2 clip bound Δ₂.
    pub sensitivity: f64,
    pub sigma: f64,
    pub delta: f64,
    pub rounds: u64,
    pub sparsity: f64,
    #[serde(default)]
    pub log_convention: LogConvention,
    #[serde(default)]
    pub variant: BoundVariant,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            sensitivity: 1.0,
            sigma: 1.0,
            delta: 1e-5,
            rounds: 1,
            sparsity: 0.9,
            log_convention: LogConvention::Natural,
            variant: BoundVariant::Statement,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sensitivity > 0.0) {
            return Err(Error::config("sensitivity must be > 0"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::config("sigma must be >= 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta {} outside (0, 1)", self.delta)));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::config("sparsity outside [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpend {
    pub epsilon: f64,
    pub delta: f64,
    /// Single-round Gaussian-mechanism ε₀ at δ₀ = δ/(2T).
    pub per_round_epsilon: f64,
}

/// The two additive terms of the bound, each already multiplied by its
/// sparsity factor, so callers can check √T and T scaling separately.
pub fn epsilon_terms(cfg: &DpConfig) -> (f64, f64) {
    let keep = 1.0 - cfg.sparsity;
    if keep == 0.0 {
        return (0.0, 0.0);
    }
    if cfg.sigma == 0.0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let t = cfg.rounds as f64;
    let log_inv_delta = cfg.log_convention.log(1.0 / cfg.delta);
    let linear = keep * cfg.sensitivity * (2.0 * t * log_inv_delta).sqrt() / cfg.sigma;
    let ratio2 = (cfg.sensitivity / cfg.sigma).powi(2);
    let quadratic = match cfg.variant {
        BoundVariant::Statement => keep * ratio2 * t / 2.0,
        BoundVariant::Derivation => keep * keep * ratio2 * t,
    };
    (linear, quadratic)
}

/// σ = 0 yields an infinite ε rather than an error.
pub fn epsilon_for(cfg: &DpConfig) -> Result<PrivacySpend> {
    cfg.validate()?;
    let (linear, quadratic) = epsilon_terms(cfg);
    let delta0 = cfg.delta / (2.0 * cfg.rounds as f64);
    let per_round_epsilon = if cfg.sigma == 0.0 {
        f64::INFINITY
    } else {
        cfg.sensitivity / cfg.sigma * (2.0 * cfg.log_convention.log(1.25 / delta0)).sqrt()
    };
    Ok(PrivacySpend { epsilon: linear + quadratic, delta: cfg.delta, per_round_epsilon })
}

/// Smallest σ meeting the privacy-utility trade-off,
/// `(1 − s)·Δ₂·√T / √(2ε)`.
pub fn sigma_for_epsilon(epsilon_target: f64, sparsity: f64, sensitivity: f64, rounds: u64) -> Result<f64> {
    if !(epsilon_target > 0.0) {
        return Err(Error::config("target epsilon must be > 0"));
    }
    Ok((1.0 - sparsity) * sensitivity * (rounds as f64).sqrt() / (2.0 * epsilon_target).sqrt())
}

/// The single-term bound `(1-s)²Δ₂²T/(2σ²)` that [`sigma_for_epsilon`]
/// inverts.
pub fn tradeoff_epsilon(sigma: f64, sparsity: f64, sensitivity: f64, rounds: u64) -> f64 {
    let keep = 1.0 - sparsity;
    if keep == 0.0 {
        return 0.0;
    }
    (keep * sensitivity / sigma).powi(2) * rounds as f64 / 2.0
}

/// Value quoted for `√(2T log 1/δ)` in the worked example with T = 3,
/// δ = 1e-5.
pub const QUOTED_INTERMEDIATE: f64 = 4.2;

/// ε for one setting under every log convention and bound variant, with a
/// check of a quoted intermediate `√(2T log 1/δ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub config: DpConfig,
    pub statement_natural: f64,
    pub statement_base10: f64,
    pub derivation_natural: f64,
    pub derivation_base10: f64,
    pub intermediate_natural: f64,
    pub intermediate_base10: f64,
    pub quoted_intermediate: Option<f64>,
    /// Whether the quoted value matches either convention to its printed
    /// precision (±0.05).
    pub quoted_reproducible: Option<bool>,
    /// [`sigma_for_epsilon`] at ε = 1 for the same s, Δ₂, T.
    pub sigma_for_unit_epsilon: f64,
}

pub fn epsilon_report(cfg: &DpConfig, quoted_intermediate: Option<f64>) -> Result<EpsilonReport> {
    let eps = |log_convention, variant| epsilon_for(&DpConfig { log_convention, variant, ..*cfg }).map(|p| p.epsilon);
    let inter = |c: LogConvention| (2.0 * cfg.rounds as f64 * c.log(1.0 / cfg.delta)).sqrt();
    let (intermediate_natural, intermediate_base10) = (inter(LogConvention::Natural), inter(LogConvention::Base10));
    Ok(EpsilonReport {
        config: *cfg,
        statement_natural: eps(LogConvention::Natural, BoundVariant::Statement)?,
        statement_base10: eps(LogConvention::Base10, BoundVariant::Statement)?,
        derivation_natural: eps(LogConvention::Natural, BoundVariant::Derivation)?,
        derivation_base10: eps(LogConvention::Base10, BoundVariant::Derivation)?,
        intermediate_natural,
        intermediate_base10,
        quoted_intermediate,
        quoted_reproducible: quoted_intermediate
            .map(|q| (q - intermediate_natural).abs() <= 0.05 || (q - intermediate_base10).abs() <= 0.05),
        sigma_for_unit_epsilon: sigma_for_epsilon(1.0, cfg.sparsity, cfg.sensitivity, cfg.rounds)?,
    })
}

/// Scales `g` down to L2 norm `bound` when it exceeds it.
pub fn clip_gradient(g: &SparseGradient, bound: f64) -> Result<SparseGradient> {
    if !(bound > 0.0) {
        return Err(Error::config("clip bound must be > 0"));
    }
    let norm = g.norm();
    if norm <= bound {
        return Ok(g.clone());
    }
    let factor = bound / norm;
    let mut out = SparseGradient { values: g.values.iter().map(|v| v * factor).collect(), nnz: 0 };
    out.recount();
    Ok(out)
}

/// Adds N(0, σ²) to retained (nonzero) coordinates only. Pruned
/// coordinates stay exactly zero.
pub fn add_gaussian_noise(g: &SparseGradient, sigma: f64, seed: u64) -> Result<SparseGradient> {
    if !(sigma >= 0.0) {
        return Err(Error::config("sigma must be >= 0"));
    }
    if sigma == 0.0 {
        return Ok(g.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = rng_from(seed);
    let values = g
        .values
        .iter()
        .map(|&v| if v != 0.0 { v + normal.sample(&mut rng) } else { 0.0 })
        .collect();
    let mut out = SparseGradient { values, nnz: 0 };
    out.recount();
    Ok(out)
}
