//! Confidence-threshold membership inference.
//!
//! The attacker scores each sample by the model's top-class probability
//! and predicts "member" when the score clears a threshold. The threshold
//! is the one maximizing balanced accuracy on the evaluated sets
//! themselves, the strongest choice available to such an attacker, so the
//! reported success rate is an upper estimate for this attack family.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::fl::{run_experiment, FlConfig, Mechanisms};
use crate::model::{local_train, Architecture, Dataset, Model, TrainConfig};
use crate::rng::rng_from;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    /// Balanced accuracy at the best threshold; 0.5 is chance.
    pub attack_success_rate: f64,
    pub auc: f64,
    pub n_members: usize,
    pub n_nonmembers: usize,
    /// Scores ≥ threshold are called members.
    pub threshold: f64,
}

/// Top-class probability of the model on every row.
pub fn confidences(model: &Model, data: &Dataset) -> Vec<f64> {
    (0..data.len())
        .map(|i| {
            let p = model.predict_proba(data.row(i));
            p.max(1.0 - p)
        })
        .collect()
}

/// Subsamples the larger set (seeded) so both sides have equal size.
fn balance(members: Vec<f64>, nonmembers: Vec<f64>, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let n = members.len().min(nonmembers.len());
    let mut rng = rng_from(seed);
    let mut take = |v: Vec<f64>| -> Vec<f64> {
        if v.len() == n {
            v
        } else {
            v.choose_multiple(&mut rng, n).copied().collect()
        }
    };
    let m = take(members);
    let nm = take(nonmembers);
    (m, nm)
}

/// Best balanced accuracy over thresholds on the union of scores, ties
/// at a threshold all land on the same side.
fn best_threshold(members: &[f64], nonmembers: &[f64]) -> (f64, f64) {
    let mut all: Vec<(f64, bool)> =
        members.iter().map(|s| (*s, true)).chain(nonmembers.iter().map(|s| (*s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (nm, nn) = (members.len() as f64, nonmembers.len() as f64);
    // Threshold above every score: nothing is called a member.
    let mut best = (0.5, f64::INFINITY);
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let score = all[i].0;
        while i < all.len() && all[i].0 == score {
            if all[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let bal = 0.5 * (tp / nm + (nn - fp) / nn);
        if bal > best.0 {
            best = (bal, score);
        }
    }
    best
}

/// Mann–Whitney AUC with ties counted as one half.
pub fn auc(members: &[f64], nonmembers: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> =
        members.iter().map(|s| (*s, true)).chain(nonmembers.iter().map(|s| (*s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Average 1-based rank of the tie group.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg_rank * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (nm, nn) = (members.len() as f64, nonmembers.len() as f64);
    (rank_sum - nm * (nm + 1.0) / 2.0) / (nm * nn)
}

/// Attack on precomputed member and non-member scores.
pub fn mia_from_scores(members: Vec<f64>, nonmembers: Vec<f64>, seed: u64) -> Result<MiaResult> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::config("membership inference needs non-empty member and non-member sets"));
    }
    let (m, nm) = balance(members, nonmembers, seed);
    let (success, threshold) = best_threshold(&m, &nm);
    Ok(MiaResult { attack_success_rate: success, auc: auc(&m, &nm), n_members: m.len(), n_nonmembers: nm.len(), threshold })
}

pub fn mia_attack(model: &Model, members: &Dataset, nonmembers: &Dataset, seed: u64) -> Result<MiaResult> {
    mia_from_scores(confidences(model, members), confidences(model, nonmembers), seed)
}

/// Re-runs the attack on `rounds` seeded shuffles of the membership
/// labels and returns the success rates.
pub fn permutation_null(members: &[f64], nonmembers: &[f64], rounds: usize, seed: u64) -> Result<Vec<f64>> {
    let mut pool: Vec<f64> = members.iter().chain(nonmembers).copied().collect();
    (0..rounds)
        .map(|r| {
            let mut rng = rng_from(seed.wrapping_add(r as u64));
            pool.shuffle(&mut rng);
            let (a, b) = pool.split_at(members.len());
            mia_from_scores(a.to_vec(), b.to_vec(), seed).map(|m| m.attack_success_rate)
        })
        .collect()
}

/// Centrally trained, unregularized model on a small training set: the
/// no-privacy baseline an attack should beat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverfitConfig {
    pub n_train: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub architecture: Architecture,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        Self { n_train: 50, epochs: 500, lr: 0.1, batch_size: 10, architecture: Architecture::Mlp { inputs: 20, hidden: 64 } }
    }
}

/// Trains on the first `n_train` rows of `pool` and attacks with as many
/// rows of `holdout` as non-members.
pub fn overfit_baseline(pool: &Dataset, holdout: &Dataset, cfg: &OverfitConfig, seed: u64) -> Result<MiaResult> {
    if pool.len() < cfg.n_train || holdout.len() < cfg.n_train {
        return Err(Error::config(format!("overfit baseline needs {} rows on each side", cfg.n_train)));
    }
    let idx: Vec<usize> = (0..cfg.n_train).collect();
    let members = pool.subset(&idx);
    let nonmembers = holdout.subset(&idx);
    let tc = TrainConfig { lr: cfg.lr, epochs: cfg.epochs, batch_size: cfg.batch_size, weight_decay: 0.0 };
    let model = local_train(&Model::init(cfg.architecture, seed), &members, &tc, seed)?;
    mia_attack(&model, &members, &nonmembers, seed)
}

/// Attack success against the configured pipeline, the same federation
/// without privacy mechanisms, and the overfit baseline, for one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaComparison {
    pub seed: u64,
    pub private: MiaResult,
    pub standard: MiaResult,
    pub overfit: MiaResult,
    pub private_accuracy: f64,
}

pub fn mia_comparison(fl: &FlConfig, overfit: &OverfitConfig, seed: u64) -> Result<MiaComparison> {
    let cfg = FlConfig { seed, ..fl.clone() };
    let r = run_experiment(&cfg)?;
    let private = mia_attack(&r.model, &r.train, &r.test, seed)?;
    let p = run_experiment(&FlConfig { mechanisms: Mechanisms::plain(), ..cfg })?;
    let standard = mia_attack(&p.model, &p.train, &p.test, seed)?;
    let overfit = overfit_baseline(&r.train, &r.test, overfit, seed)?;
    Ok(MiaComparison { seed, private, standard, overfit, private_accuracy: r.final_report().global_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uninformative_scores() {
        let r = mia_from_scores(vec![0.7; 20], vec![0.7; 20], 0).unwrap();
        assert_eq!(r.attack_success_rate, 0.5);
        assert_eq!(r.auc, 0.5);
    }

    #[test]
    fn separable_scores() {
        let r = mia_from_scores(vec![0.9; 10], vec![0.6; 10], 0).unwrap();
        assert_eq!(r.attack_success_rate, 1.0);
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.threshold, 0.9);
    }

    #[test]
    fn auc_hand_example() {
        // Pairs (m, n): (3,1) (3,2) (3,4) (5,1) (5,2) (5,4) -> 5 of 6 wins.
        assert!((auc(&[3.0, 5.0], &[1.0, 2.0, 4.0]) - 5.0 / 6.0).abs() < 1e-15);
        assert!((auc(&[2.0], &[2.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn balancing_subsamples_larger_side() {
        let r = mia_from_scores(vec![0.9; 30], vec![0.6; 10], 1).unwrap();
        assert_eq!((r.n_members, r.n_nonmembers), (10, 10));
    }

    #[test]
    fn empty_sets_rejected() {
        assert!(matches!(mia_from_scores(vec![], vec![0.5], 0), Err(Error::Config(_))));
    }
}
