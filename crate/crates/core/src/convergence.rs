//! Sparse SGD on diagonal quadratics, where f* and the smoothness
//! constant are known exactly.
//!
//! `f(w) = ½ Σ hᵢ (wᵢ − w*ᵢ)²`, so `L = max hᵢ` and `f* = 0`. Stochastic
//! gradients add isotropic Gaussian noise of scale `noise`.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};
use crate::sparsifier::{sparsify, SparseGradient, SparsifierConfig, SparsifierState};
use crate::{Error, Result};

/// Suboptimality above this counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProblem {
    pub hessian: Vec<f64>,
    pub optimum: Vec<f64>,
    /// Standard deviation of per-coordinate gradient noise.
    pub noise: f64,
}

impl QuadraticProblem {
    pub fn new(hessian: Vec<f64>, optimum: Vec<f64>, noise: f64) -> Result<Self> {
        if hessian.len() != optimum.len() || hessian.is_empty() {
            return Err(Error::config("hessian and optimum must have equal, nonzero length"));
        }
        if hessian.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::config("hessian diagonal must be positive"));
        }
        if !(noise >= 0.0) {
            return Err(Error::config("noise must be >= 0"));
        }
        Ok(Self { hessian, optimum, noise })
    }

    /// Curvatures log-spaced over `[h_min, 1]` and a standard-normal
    /// optimum drawn from `seed`.
    pub fn log_spaced(dim: usize, h_min: f64, noise: f64, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::config("dimension must be >= 2"));
        }
        let hessian = (0..dim).map(|i| h_min.powf(1.0 - i as f64 / (dim - 1) as f64)).collect();
        let mut rng = stream_rng(seed, Stream::Data, 0, 0);
        let optimum = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        Self::new(hessian, optimum, noise)
    }

    pub fn dim(&self) -> usize {
        self.hessian.len()
    }

    pub fn smoothness(&self) -> f64 {
        self.hessian.iter().copied().fold(0.0, f64::max)
    }

    pub fn suboptimality(&self, w: &[f64]) -> f64 {
        0.5 * self.hessian.iter().zip(w).zip(&self.optimum).map(|((h, x), o)| h * (x - o) * (x - o)).sum::<f64>()
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.hessian.iter().zip(w).zip(&self.optimum).map(|((h, x), o)| h * (x - o)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    #[default]
    Constant,
    /// η / √t
    InverseSqrt,
}

impl StepSchedule {
    pub fn step(self, eta: f64, t: usize) -> f64 {
        match self {
            StepSchedule::Constant => eta,
            StepSchedule::InverseSqrt => eta / (t as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub sparsity: f64,
    pub error_feedback: bool,
    pub steps: usize,
    pub eta: f64,
    #[serde(default)]
    pub schedule: StepSchedule,
    /// EMA factor of the sparsifier threshold.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub adaptive_threshold: bool,
}

fn default_alpha() -> f64 {
    0.7
}

fn default_true() -> bool {
    true
}

impl SgdConfig {
    pub fn new(sparsity: f64, error_feedback: bool, steps: usize, eta: f64) -> Self {
        Self {
            sparsity,
            error_feedback,
            steps,
            eta,
            schedule: StepSchedule::Constant,
            alpha: default_alpha(),
            adaptive_threshold: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `f(w_t) − f*` after each step t = 1..T.
    pub losses: Vec<f64>,
    /// Step at which the suboptimality first exceeded the limit; the
    /// trajectory stops there.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Gradient descent from w = 0 where every step `η_t · g_t` passes
/// through the sparsifier, so the error memory holds pending parameter
/// movement.
pub fn run_sparse_sgd(problem: &QuadraticProblem, cfg: &SgdConfig, seed: u64) -> Result<Trajectory> {
    if cfg.steps == 0 {
        return Err(Error::config("steps must be >= 1"));
    }
    let l = problem.smoothness();
    if !(cfg.eta > 0.0 && cfg.eta <= 1.0 / l * (1.0 + 1e-12)) {
        return Err(Error::config(format!("step size {} must lie in (0, 1/L = {}]", cfg.eta, 1.0 / l)));
    }
    let sp = SparsifierConfig {
        sparsity: cfg.sparsity,
        alpha: cfg.alpha,
        error_feedback: cfg.error_feedback,
        adaptive_threshold: cfg.adaptive_threshold,
    };
    sp.validate()?;
    let d = problem.dim();
    let mut state = SparsifierState::new(d);
    let mut w = vec![0.0; d];
    let normal = Normal::new(0.0, problem.noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = stream_rng(seed, Stream::Gradient, 0, 0);
    let mut losses = Vec::with_capacity(cfg.steps);
    for t in 1..=cfg.steps {
        let eta_t = cfg.schedule.step(cfg.eta, t);
        let mut step = problem.gradient(&w);
        for s in step.iter_mut() {
            if problem.noise > 0.0 {
                *s += normal.sample(&mut rng);
            }
            *s *= eta_t;
        }
        let (sparse, next): (SparseGradient, _) = sparsify(&step.into(), &sp, &state)?;
        state = next;
        for (x, u) in w.iter_mut().zip(&sparse.values) {
            *x -= u;
        }
        let f = problem.suboptimality(&w);
        if !(f <= DIVERGENCE_LIMIT) {
            return Ok(Trajectory { losses, diverged_at: Some(t) });
        }
        losses.push(f);
    }
    Ok(Trajectory { losses, diverged_at: None })
}

/// Least-squares slope of log(loss) against log(t) over the tail
/// `t ≥ start_fraction · T`, sampled at log-spaced steps so every decade
/// weighs the same. `None` when the series is shorter than 100 or
/// contains non-positive values in the tail.
pub fn fit_convergence_rate(losses: &[f64], start_fraction: f64) -> Option<f64> {
    let n = losses.len();
    if n < 100 {
        return None;
    }
    let start = ((start_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    if losses[start - 1..].iter().any(|y| !(*y > 0.0)) {
        return None;
    }
    let (lo, hi) = ((start as f64).ln(), (n as f64).ln());
    let samples = 64;
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(samples);
    let mut last = 0;
    for i in 0..samples {
        let t = (lo + (hi - lo) * i as f64 / (samples - 1) as f64).exp().round() as usize;
        let t = t.clamp(start, n);
        if t == last {
            continue;
        }
        last = t;
        pts.push(((t as f64).ln(), losses[t - 1].ln()));
    }
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Pointwise median of equally long trajectories.
pub fn median_trajectory(runs: &[Trajectory]) -> Vec<f64> {
    let len = runs.iter().map(|r| r.losses.len()).min().unwrap_or(0);
    (0..len).map(|t| crate::stats::median(&runs.iter().map(|r| r.losses[t]).collect::<Vec<_>>())).collect()
}

/// A family of log-spaced quadratics, one per curvature floor, each run
/// with and without error feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub dim: usize,
    /// Smallest curvature of each problem; the largest is 1.
    pub h_min: Vec<f64>,
    pub noise: f64,
    pub sparsity: f64,
    pub steps: usize,
    pub eta: f64,
    pub schedule: StepSchedule,
    /// Tail used by [`fit_convergence_rate`].
    pub fit_start_fraction: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            h_min: vec![0.001, 0.01],
            noise: 0.1,
            sparsity: 0.9,
            steps: 5000,
            eta: 0.5,
            schedule: StepSchedule::InverseSqrt,
            fit_start_fraction: 0.1,
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.steps < 100 || !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::config("need dim >= 2, steps >= 100 and eta in (0, 1]"));
        }
        if self.h_min.is_empty() || self.h_min.iter().any(|h| !(*h > 0.0 && *h <= 1.0)) {
            return Err(Error::config("h_min must be a non-empty list of values in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.fit_start_fraction) {
            return Err(Error::config("fit_start_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub h_min: f64,
    /// Fitted slope per seed, with error feedback.
    pub slopes: Vec<Option<f64>>,
    pub median_slope: f64,
    pub final_with_feedback: Vec<f64>,
    pub final_without_feedback: Vec<f64>,
    /// Ratio of median final losses, without over with feedback.
    pub feedback_gain: f64,
    pub median_with_feedback: Vec<f64>,
    pub median_without_feedback: Vec<f64>,
}

/// Runs every problem of the suite over `seeds`. A diverged run counts
/// as an infinite final loss and an absent slope.
pub fn run_suite(cfg: &ConvergenceConfig, seeds: &[u64]) -> Result<Vec<ProblemSummary>> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::config("need at least one seed"));
    }
    cfg.h_min
        .iter()
        .map(|&h| {
            let run = |ef: bool| -> Result<Vec<Trajectory>> {
                seeds
                    .iter()
                    .map(|&seed| {
                        let p = QuadraticProblem::log_spaced(cfg.dim, h, cfg.noise, seed)?;
                        let sgd = SgdConfig { schedule: cfg.schedule, ..SgdConfig::new(cfg.sparsity, ef, cfg.steps, cfg.eta) };
                        run_sparse_sgd(&p, &sgd, seed)
                    })
                    .collect()
            };
            let (with, without) = (run(true)?, run(false)?);
            let finals = |runs: &[Trajectory]| -> Vec<f64> {
                runs.iter().map(|r| if r.diverged_at.is_some() { f64::INFINITY } else { r.final_loss() }).collect()
            };
            let slopes: Vec<Option<f64>> = with
                .iter()
                .map(|r| if r.diverged_at.is_some() { None } else { fit_convergence_rate(&r.losses, cfg.fit_start_fraction) })
                .collect();
            let slope_values: Vec<f64> = slopes.iter().map(|s| s.unwrap_or(f64::INFINITY)).collect();
            let (fw, fo) = (finals(&with), finals(&without));
            Ok(ProblemSummary {
                h_min: h,
                median_slope: crate::stats::median(&slope_values),
                feedback_gain: crate::stats::median(&fo) / crate::stats::median(&fw),
                slopes,
                final_with_feedback: fw,
                final_without_feedback: fo,
                median_with_feedback: median_trajectory(&with),
                median_without_feedback: median_trajectory(&without),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_rates() {
        let inv: Vec<f64> = (1..=1000).map(|t| 3.0 / t as f64).collect();
        let inv_sqrt: Vec<f64> = (1..=1000).map(|t| 3.0 / (t as f64).sqrt()).collect();
        assert!((fit_convergence_rate(&inv, 0.1).unwrap() + 1.0).abs() < 0.1);
        assert!((fit_convergence_rate(&inv_sqrt, 0.1).unwrap() + 0.5).abs() < 0.1);
        assert!(fit_convergence_rate(&inv[..50], 0.1).is_none());
        let mut bad = inv.clone();
        bad[900] = 0.0;
        assert!(fit_convergence_rate(&bad, 0.1).is_none());
    }

    #[test]
    fn step_size_bound_enforced() {
        let p = QuadraticProblem::log_spaced(10, 0.1, 0.0, 1).unwrap();
        assert!(run_sparse_sgd(&p, &SgdConfig::new(0.9, true, 10, 1.5), 0).is_err());
    }

    #[test]
    fn dense_deterministic_matches_closed_form() {
        let p = QuadraticProblem::new(vec![1.0, 0.5], vec![2.0, -4.0], 0.0).unwrap();
        let tr = run_sparse_sgd(&p, &SgdConfig::new(0.0, true, 3, 0.5), 0).unwrap();
        // w_i(t) = o_i (1 - (1 - η h_i)^t)
        let f = |t: i32| 0.5 * (1.0 * (2.0 * 0.5f64.powi(t)).powi(2) + 0.5 * (4.0 * 0.75f64.powi(t)).powi(2));
        for t in 1..=3 {
            assert!((tr.losses[t as usize - 1] - f(t)).abs() < 1e-12);
        }
    }
}
