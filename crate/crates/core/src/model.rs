//! Desk-scale client model: synthetic binary classification data, a
//! logistic-regression or one-hidden-layer MLP classifier over a flat
//! parameter vector, seeded mini-batch SGD, and Dirichlet non-IID
//! partitioning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_from;
use crate::{Error, Result};

/// Row-major feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, n_features: usize, labels: Vec<u8>) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::config("dataset needs at least one feature"));
        }
        if features.len() != n_features * labels.len() {
            return Err(Error::contract(format!(
                "feature matrix has {} entries, expected {} x {}",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::config(format!("label {bad} is not binary")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("non-finite feature value"));
        }
        Ok(Self { features, n_features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Counts of (class 0, class 1).
    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&y| y == 1).count();
        [self.len() - ones, ones]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset { features, n_features: self.n_features, labels }
    }

    /// Seeded split into (first, second) with `first_fraction` of samples
    /// in the first part.
    pub fn split(&self, first_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng_from(seed));
        let cut = ((self.len() as f64) * first_fraction).round() as usize;
        let cut = cut.min(self.len());
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }
}

/// Two isotropic Gaussian clusters, one per class, whose means sit
/// `separation` apart along a random unit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub separation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_samples: 2000, n_features: 20, separation: 2.5 }
    }
}

impl SyntheticSpec {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        if self.n_samples < 4 {
            return Err(Error::config("synthetic dataset needs at least 4 samples"));
        }
        let mut rng = rng_from(seed);
        let d = self.n_features;
        let mut direction: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        direction.iter_mut().for_each(|x| *x /= norm);

        let mut labels: Vec<u8> = (0..self.n_samples).map(|i| (i % 2) as u8).collect();
        labels.shuffle(&mut rng);
        let mut features = Vec::with_capacity(self.n_samples * d);
        for &y in &labels {
            let sign = if y == 1 { 0.5 } else { -0.5 };
            for u in &direction {
                let noise: f64 = rng.sample(StandardNormal);
                features.push(sign * self.separation * u + noise);
            }
        }
        Dataset::new(features, d, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    Logistic { inputs: usize },
    Mlp { inputs: usize, hidden: usize },
}

impl Architecture {
    /// Number of flattened parameters.
    pub fn dim(&self) -> usize {
        match *self {
            Architecture::Logistic { inputs } => inputs + 1,
            Architecture::Mlp { inputs, hidden } => inputs * hidden + 2 * hidden + 1,
        }
    }

    pub fn inputs(&self) -> usize {
        match *self {
            Architecture::Logistic { inputs } | Architecture::Mlp { inputs, .. } => inputs,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        match *self {
            Architecture::Logistic { inputs } => vec![inputs, 1],
            Architecture::Mlp { inputs, hidden } => vec![inputs, hidden, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub arch: Architecture,
    pub weights: Vec<f64>,
}

/// A flattened model delta `after - before`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(d: usize) -> Self {
        Self { values: vec![0.0; d] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for GradientVector {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit, numerically stable.
fn bce_from_logit(z: f64, y: u8) -> f64 {
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - if y == 1 { z } else { 0.0 }
}

impl Model {
    /// Logistic models start at zero; MLP weights are drawn uniformly in
    /// ±1/sqrt(fan_in) with zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut weights = vec![0.0; arch.dim()];
        if let Architecture::Mlp { inputs, hidden } = arch {
            let mut rng = rng_from(seed);
            let b1 = 1.0 / (inputs as f64).sqrt();
            for w in &mut weights[..inputs * hidden] {
                *w = rng.random_range(-b1..b1);
            }
            let b2 = 1.0 / (hidden as f64).sqrt();
            let off = inputs * hidden + hidden;
            for w in &mut weights[off..off + hidden] {
                *w = rng.random_range(-b2..b2);
            }
        }
        Self { arch, weights }
    }

    pub fn with_weights(arch: Architecture, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != arch.dim() {
            return Err(Error::contract(format!(
                "weights have length {}, architecture needs {}",
                weights.len(),
                arch.dim()
            )));
        }
        Ok(Self { arch, weights })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    fn logit_with(&self, weights: &[f64], x: &[f64], hidden_buf: &mut Vec<f64>) -> f64 {
        match self.arch {
            Architecture::Logistic { inputs } => {
                dot(&weights[..inputs], x) + weights[inputs]
            }
            Architecture::Mlp { inputs, hidden } => {
                hidden_buf.clear();
                let (w1, rest) = weights.split_at(inputs * hidden);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                for j in 0..hidden {
                    hidden_buf.push((dot(&w1[j * inputs..(j + 1) * inputs], x) + b1[j]).tanh());
                }
                dot(w2, hidden_buf) + b2[0]
            }
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.logit_with(&self.weights, x, &mut Vec::new())
    }

    /// Probability of class 1.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.logit(x) >= 0.0)
    }

    /// Mean BCE over `indices` plus `weight_decay/2 * |w|^2`, with its
    /// gradient accumulated into `grad` (overwritten).
    pub fn loss_and_grad(
        &self,
        weights: &[f64],
        data: &Dataset,
        indices: &[usize],
        weight_decay: f64,
        grad: &mut [f64],
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut hidden_buf = Vec::new();
        let mut loss = 0.0;
        for &i in indices {
            let x = data.row(i);
            let y = data.label(i);
            let z = self.logit_with(weights, x, &mut hidden_buf);
            loss += bce_from_logit(z, y);
            let dz = sigmoid(z) - f64::from(y);
            match self.arch {
                Architecture::Logistic { inputs } => {
                    for (g, xi) in grad[..inputs].iter_mut().zip(x) {
                        *g += dz * xi;
                    }
                    grad[inputs] += dz;
                }
                Architecture::Mlp { inputs, hidden } => {
                    let w2_off = inputs * hidden + hidden;
                    for j in 0..hidden {
                        let h = hidden_buf[j];
                        grad[w2_off + j] += dz * h;
                        let dpre = dz * weights[w2_off + j] * (1.0 - h * h);
                        let row = &mut grad[j * inputs..(j + 1) * inputs];
                        for (g, xi) in row.iter_mut().zip(x) {
                            *g += dpre * xi;
                        }
                        grad[inputs * hidden + j] += dpre;
                    }
                    grad[w2_off + hidden] += dz;
                }
            }
        }
        let n = indices.len().max(1) as f64;
        loss /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        if weight_decay > 0.0 {
            loss += 0.5 * weight_decay * dot(weights, weights);
            for (g, w) in grad.iter_mut().zip(weights) {
                *g += weight_decay * w;
            }
        }
        loss
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.1, epochs: 2, batch_size: 16, weight_decay: 0.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        Ok(())
    }
}

/// Mini-batch SGD over a fresh seeded shuffle each epoch.
pub fn local_train(model: &Model, data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("cannot train on an empty dataset"));
    }
    if data.n_features() != model.arch.inputs() {
        return Err(Error::contract(format!(
            "dataset has {} features, model expects {}",
            data.n_features(),
            model.arch.inputs()
        )));
    }
    let mut rng = rng_from(seed);
    let mut weights = model.weights.clone();
    let mut grad = vec![0.0; weights.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let loss = model.loss_and_grad(&weights, data, chunk, cfg.weight_decay, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch, loss });
            }
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= cfg.lr * g;
            }
            if weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Divergence { epoch, batch, loss: f64::INFINITY });
            }
        }
    }
    Ok(Model { arch: model.arch, weights })
}

/// `after - before`, elementwise.
pub fn compute_update(before: &Model, after: &Model) -> Result<GradientVector> {
    if before.arch != after.arch || before.dim() != after.dim() {
        return Err(Error::contract(format!(
            "architecture mismatch: {:?} vs {:?}",
            before.arch, after.arch
        )));
    }
    Ok(before.weights.iter().zip(&after.weights).map(|(b, a)| a - b).collect::<Vec<_>>().into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub loss: f64,
}

/// F1 for class 1 from raw confusion counts. When there are neither
/// positive predictions nor positive labels the classifier is perfect on
/// the (empty) positive class and F1 is 1.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let predicted = tp + fp;
    let actual = tp + fn_;
    match (predicted, actual) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => {
            let precision = tp as f64 / predicted as f64;
            let recall = tp as f64 / actual as f64;
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        }
    }
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0, 0, 0, 0);
    let mut loss = 0.0;
    for i in 0..data.len() {
        let z = model.logit(data.row(i));
        let y = data.label(i);
        let pred = u8::from(z >= 0.0);
        loss += bce_from_logit(z, y);
        correct += usize::from(pred == y);
        match (pred, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    Ok(Metrics {
        accuracy: correct as f64 / data.len() as f64,
        f1: f1_score(tp, fp, fn_),
        loss: loss / data.len() as f64,
    })
}

/// Assigns sample indices to `n_clients` shards. For each class the
/// client proportions are drawn from a symmetric Dirichlet(alpha) and the
/// shuffled class members are cut at the cumulative proportions. Clients
/// left empty take one sample from the currently largest shard.
pub fn partition_dirichlet_indices(
    labels: &[u8],
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if n_clients == 0 {
        return Err(Error::config("n_clients must be >= 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("dirichlet alpha {alpha} must be > 0")));
    }
    if labels.len() < n_clients {
        return Err(Error::config(format!(
            "{} samples cannot cover {} clients",
            labels.len(),
            n_clients
        )));
    }
    let mut rng = rng_from(seed);
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::config(e.to_string()))?;
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for class in 0..=1u8 {
        let mut members: Vec<usize> =
            labels.iter().enumerate().filter(|(_, &y)| y == class).map(|(i, _)| i).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let mut props: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = props.iter().sum();
        if total > 0.0 {
            props.iter_mut().for_each(|p| *p /= total);
        } else {
            // every gamma draw underflowed; all mass goes to one client
            props.iter_mut().for_each(|p| *p = 0.0);
            props[rng.random_range(0..n_clients)] = 1.0;
        }
        let n = members.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (client, p) in props.iter().enumerate() {
            cum += p;
            let end =
                if client + 1 == n_clients { n } else { ((cum * n as f64).floor() as usize).min(n) };
            let end = end.max(start);
            shards[client].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    while let Some(empty) = shards.iter().position(|s| s.is_empty()) {
        let largest = (0..n_clients).max_by_key(|&c| (shards[c].len(), usize::MAX - c)).unwrap();
        let moved = shards[largest].pop().expect("largest shard is non-empty");
        shards[empty].push(moved);
    }
    for shard in &mut shards {
        shard.sort_unstable();
    }
    Ok(shards)
}

pub fn partition_dirichlet(
    data: &Dataset,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Dataset>> {
    let shards = partition_dirichlet_indices(data.labels(), n_clients, alpha, seed)?;
    Ok(shards.iter().map(|idx| data.subset(idx)).collect())
}
