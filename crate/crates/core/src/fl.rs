//! Round protocol over simulated clients.
//!
//! Each round the server broadcasts the global weights; every available
//! client trains locally, sparsifies its update, clips it, adds Gaussian
//! noise to the retained coordinates and publishes two pieces of cleartext
//! metadata: its retained index set and max |value|. The server answers
//! with the index union and a shared quantization range. Clients then
//! pack their values at the union positions into lanes, encrypt, and the
//! server adds ciphertexts in client-index order, decrypts the sum,
//! unpacks, de-quantizes, divides by the number of contributions and
//! applies `w ← w + Ḡ`.
//!
//! Clients run in parallel; everything that crosses a thread is an owned
//! message and contributions are always combined in client-index order,
//! so results do not depend on scheduling.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::index_stream_bytes;
use crate::dp::{self, BoundVariant, DpConfig, LogConvention};
use crate::he::packing::{pack_lanes, unpack_sum};
use crate::he::{self, Ciphertext, CkksContext, CkksParams, KeyPair, PackingConfig, HEADER_BYTES};
use crate::model::{self, Architecture, Dataset, Model, SyntheticSpec, TrainConfig};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::sparsifier::{sparsify_with_stats, SparseGradient, SparsifierConfig, SparsifierState};
use crate::{Error, Result};

/// Mechanism switches. Everything on is the full pipeline; everything off
/// is plain FedAvg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mechanisms {
    pub sparsification: bool,
    pub error_feedback: bool,
    pub adaptive_threshold: bool,
    pub packing: bool,
    pub encryption: bool,
    /// Clipping and Gaussian noise.
    pub privacy: bool,
}

impl Default for Mechanisms {
    fn default() -> Self {
        Self::full()
    }
}

impl Mechanisms {
    pub fn full() -> Self {
        Self {
            sparsification: true,
            error_feedback: true,
            adaptive_threshold: true,
            packing: true,
            encryption: true,
            privacy: true,
        }
    }

    pub fn plain() -> Self {
        Self {
            sparsification: false,
            error_feedback: false,
            adaptive_threshold: false,
            packing: false,
            encryption: false,
            privacy: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySettings {
    /// L2 clip bound Δ₂ applied to each sparse update.
    pub clip_norm: f64,
    pub sigma: f64,
    pub delta: f64,
    #[serde(default)]
    pub log_convention: LogConvention,
    #[serde(default)]
    pub variant: BoundVariant,
}

impl Default for PrivacySettings {
    fn default() -> Self {
        Self { clip_norm: 2.0, sigma: 0.1, delta: 1e-5, log_convention: LogConvention::Natural, variant: BoundVariant::Statement }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeSettings {
    pub params: CkksParams,
    pub packing: PackingConfig,
    /// Scale used when real values are encrypted without lane packing.
    pub raw_scale_log2: u32,
}

impl Default for HeSettings {
    fn default() -> Self {
        Self {
            params: CkksParams::desk_packing(),
            packing: PackingConfig { lanes: 2, lane_bits: 8, guard_bits: 8, clip_range: 1.0 },
            raw_scale_log2: 40,
        }
    }
}

impl HeSettings {
    /// One 24-bit lane per slot: quantization error far below 1e-6.
    pub fn lossless() -> Self {
        Self {
            packing: PackingConfig { lanes: 1, lane_bits: 24, guard_bits: 3, clip_range: 1.0 },
            ..Self::default()
        }
    }
}

/// Exponential client latency. Updates slower than the timeout arrive
/// `⌊latency / timeout⌋` rounds late.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub mean: f64,
}

/// Simulated costs in seconds (bandwidth in bytes per second).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub train_per_sample: f64,
    pub encrypt_per_ciphertext: f64,
    pub add_per_ciphertext: f64,
    pub decrypt_per_ciphertext: f64,
    pub bandwidth: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            train_per_sample: 1e-4,
            encrypt_per_ciphertext: 5e-3,
            add_per_ciphertext: 1e-4,
            decrypt_per_ciphertext: 2e-3,
            bandwidth: 12.5e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    /// The client encrypts at twice the agreed scale in the given round.
    ScaleMismatch { round: u64, client: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlConfig {
    pub n_clients: usize,
    pub rounds: u64,
    pub lr: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub sparsity: f64,
    pub alpha: f64,
    pub mechanisms: Mechanisms,
    pub privacy: PrivacySettings,
    pub he: HeSettings,
    pub min_quorum: usize,
    pub dropout_probability: f64,
    pub latency: Option<LatencyModel>,
    pub client_timeout: f64,
    pub staleness_limit: u64,
    pub seed: u64,
    pub architecture: Architecture,
    pub data: SyntheticSpec,
    pub test_fraction: f64,
    pub dirichlet_alpha: f64,
    pub cost: CostModel,
    pub measure_wall_time: bool,
    pub fault: Option<Fault>,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            n_clients: 5,
            rounds: 3,
            lr: 0.1,
            local_epochs: 2,
            batch_size: 16,
            weight_decay: 0.0,
            sparsity: 0.9,
            alpha: 0.7,
            mechanisms: Mechanisms::full(),
            privacy: PrivacySettings::default(),
            he: HeSettings::default(),
            min_quorum: 3,
            dropout_probability: 0.0,
            latency: None,
            client_timeout: 300.0,
            staleness_limit: 2,
            seed: 42,
            architecture: Architecture::Logistic { inputs: 20 },
            data: SyntheticSpec::default(),
            test_fraction: 0.3,
            dirichlet_alpha: 0.1,
            cost: CostModel::default(),
            measure_wall_time: false,
            fault: None,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::config("n_clients must be >= 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds must be >= 1"));
        }
        if self.min_quorum == 0 || self.min_quorum > self.n_clients {
            return Err(Error::config(format!(
                "min_quorum {} outside 1..={}",
                self.min_quorum, self.n_clients
            )));
        }
        if !(0.0..=1.0).contains(&self.dropout_probability) {
            return Err(Error::config("dropout_probability outside [0, 1]"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction outside (0, 1)"));
        }
        if !(self.client_timeout > 0.0) {
            return Err(Error::config("client_timeout must be > 0"));
        }
        if self.architecture.inputs() != self.data.n_features {
            return Err(Error::config(format!(
                "architecture expects {} inputs, data has {} features",
                self.architecture.inputs(),
                self.data.n_features
            )));
        }
        self.train_config().validate()?;
        self.sparsifier().validate()?;
        if self.mechanisms.privacy {
            let p = &self.privacy;
            if !(p.clip_norm > 0.0) || !(p.sigma >= 0.0) || !(p.delta > 0.0 && p.delta < 1.0) {
                return Err(Error::config("privacy settings need clip_norm > 0, sigma >= 0, delta in (0, 1)"));
            }
        }
        if self.mechanisms.encryption || self.mechanisms.packing {
            self.he.params.validate()?;
        }
        if self.mechanisms.packing {
            // Stale updates can join a round, so guard bits must cover
            // every client at once.
            if self.mechanisms.encryption {
                self.he.packing.validate_for(&self.he.params, self.n_clients)?;
            } else {
                self.he.packing.validate(self.n_clients)?;
            }
        }
        if self.mechanisms.encryption && !self.mechanisms.packing {
            let headroom = self.he.params.q_bits.saturating_sub(self.he.raw_scale_log2);
            if headroom < 8 {
                return Err(Error::config(format!(
                    "raw_scale_log2 {} leaves {headroom} bits below q",
                    self.he.raw_scale_log2
                )));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { lr: self.lr, epochs: self.local_epochs, batch_size: self.batch_size, weight_decay: self.weight_decay }
    }

    pub fn sparsifier(&self) -> SparsifierConfig {
        SparsifierConfig {
            sparsity: self.sparsity,
            alpha: self.alpha,
            error_feedback: self.mechanisms.error_feedback,
            adaptive_threshold: self.mechanisms.adaptive_threshold,
        }
    }

    /// Privacy spent after `completed` rounds; `None` when no finite
    /// guarantee holds (mechanism off or σ = 0).
    pub fn epsilon_after(&self, completed: u64) -> Result<Option<f64>> {
        if completed == 0 {
            return Ok(Some(0.0));
        }
        if !self.mechanisms.privacy || self.privacy.sigma == 0.0 {
            return Ok(None);
        }
        let sparsity = if self.mechanisms.sparsification { self.sparsity } else { 0.0 };
        let spend = dp::epsilon_for(&DpConfig {
            sensitivity: self.privacy.clip_norm,
            sigma: self.privacy.sigma,
            delta: self.privacy.delta,
            rounds: completed,
            sparsity,
            log_convention: self.privacy.log_convention,
            variant: self.privacy.variant,
        })?;
        Ok(Some(spend.epsilon))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RoundOutcome {
    Completed,
    QuorumFailure { available: usize, required: usize },
    Aborted { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub outcome: RoundOutcome,
    pub global_accuracy: f64,
    pub f1: f64,
    pub loss: f64,
    /// Largest single-client upload this round.
    pub bytes_up_per_client: u64,
    pub bytes_up_total: u64,
    pub bytes_down_total: u64,
    /// Upload bytes per contribution, aligned with `contributors`.
    pub bytes_up_by_client: Vec<u64>,
    pub epsilon_cumulative: Option<f64>,
    /// Clients whose fresh update arrived in time.
    pub participating_clients: Vec<usize>,
    /// Every update aggregated this round as (client, origin round).
    pub contributors: Vec<(usize, u64)>,
    pub stale_dropped: usize,
    pub ciphertexts: usize,
    pub union_size: usize,
    pub clip_range: f64,
    /// Simulated seconds from the cost model.
    pub wall_time: f64,
    pub measured_seconds: Option<f64>,
    pub he_decryption_ok: bool,
}

impl RoundReport {
    pub fn completed(&self) -> bool {
        self.outcome == RoundOutcome::Completed
    }
}

#[derive(Debug, Clone)]
struct PendingUpdate {
    client: usize,
    origin: u64,
    deliver: u64,
    update: SparseGradient,
}

/// Mutable protocol state carried between rounds.
#[derive(Debug, Clone)]
pub struct FlState {
    pub model: Model,
    pub sparsifiers: Vec<SparsifierState>,
    pub completed_rounds: u64,
    pending: Vec<PendingUpdate>,
}

/// Immutable per-experiment environment: data shards, HE keys.
pub struct FlEnv {
    pub cfg: FlConfig,
    pub clients: Vec<Dataset>,
    pub train: Dataset,
    pub test: Dataset,
    he: Option<(CkksContext, KeyPair)>,
}

/// Everything that went into one aggregate, for oracle comparisons.
#[derive(Debug, Clone, Default)]
pub struct RoundTrace {
    /// (client, update) pairs after sparsification, clipping and noise.
    pub contributions: Vec<(usize, SparseGradient)>,
    /// The averaged update applied to the model.
    pub aggregate: Option<Vec<f64>>,
}

impl FlEnv {
    pub fn new(cfg: FlConfig) -> Result<Self> {
        cfg.validate()?;
        let data = cfg.data.generate(derive_seed(cfg.seed, Stream::Data, 0, 0))?;
        let (test, train) = data.split(cfg.test_fraction, derive_seed(cfg.seed, Stream::Data, 1, 0));
        let clients = model::partition_dirichlet(
            &train,
            cfg.n_clients,
            cfg.dirichlet_alpha,
            derive_seed(cfg.seed, Stream::Partition, 0, 0),
        )?;
        let he = if cfg.mechanisms.encryption {
            let ctx = CkksContext::new(cfg.he.params)?;
            let keys = he::keygen(&ctx, derive_seed(cfg.seed, Stream::Keygen, 0, 0));
            Some((ctx, keys))
        } else {
            None
        };
        Ok(Self { cfg, clients, train, test, he })
    }

    pub fn initial_state(&self) -> FlState {
        let model = Model::init(self.cfg.architecture, derive_seed(self.cfg.seed, Stream::Init, 0, 0));
        let d = model.dim();
        FlState {
            model,
            sparsifiers: vec![SparsifierState::new(d); self.cfg.n_clients],
            completed_rounds: 0,
            pending: Vec::new(),
        }
    }

    /// Rounds are numbered from 1.
    pub fn run_round(&self, state: &FlState, round: u64) -> Result<(FlState, RoundReport, RoundTrace)> {
        let started = Instant::now();
        let cfg = &self.cfg;
        let d = state.model.dim();

        let available = simulate_dropout(cfg, round);
        let latency = simulate_latency(cfg, round, &available);
        let on_time: Vec<usize> =
            available.iter().copied().filter(|c| latency.get(c).is_none_or(|l| l.0 == 0)).collect();
        let (arriving, waiting): (Vec<PendingUpdate>, Vec<PendingUpdate>) =
            state.pending.iter().cloned().partition(|p| p.deliver <= round);
        let stale_dropped = arriving.iter().filter(|p| round - p.origin > cfg.staleness_limit).count();
        let arriving: Vec<PendingUpdate> =
            arriving.into_iter().filter(|p| round - p.origin <= cfg.staleness_limit).collect();

        let contributions_expected = on_time.len() + arriving.len();
        if contributions_expected < cfg.min_quorum {
            let mut next = state.clone();
            next.pending = waiting;
            let report = self.report_without_update(
                state,
                round,
                RoundOutcome::QuorumFailure { available: contributions_expected, required: cfg.min_quorum },
                on_time,
                stale_dropped,
                started,
            )?;
            return Ok((next, report, RoundTrace::default()));
        }

        // Local work, in parallel, for every available client (stragglers
        // compute now and deliver later).
        let train_cfg = cfg.train_config();
        let sp = cfg.sparsifier();
        let local: Vec<(usize, SparseGradient, SparsifierState)> = available
            .par_iter()
            .map(|&c| -> Result<_> {
                let data = &self.clients[c];
                let trained = model::local_train(&state.model, data, &train_cfg, derive_seed(cfg.seed, Stream::Train, round, c as u64))?;
                let update = model::compute_update(&state.model, &trained)?;
                let (sparse, sp_state) = if cfg.mechanisms.sparsification {
                    let (g, s, _) = sparsify_with_stats(&update, &sp, &state.sparsifiers[c])?;
                    (g, s)
                } else {
                    (SparseGradient::from_dense(update.values), state.sparsifiers[c].clone())
                };
                let released = if cfg.mechanisms.privacy {
                    let clipped = dp::clip_gradient(&sparse, cfg.privacy.clip_norm)?;
                    dp::add_gaussian_noise(&clipped, cfg.privacy.sigma, derive_seed(cfg.seed, Stream::Noise, round, c as u64))?
                } else {
                    sparse
                };
                Ok((c, released, sp_state))
            })
            .collect::<Result<_>>()?;

        let mut next = state.clone();
        next.pending = waiting;
        let mut fresh = Vec::new();
        for (c, update, sp_state) in local {
            next.sparsifiers[c] = sp_state;
            match latency.get(&c) {
                Some(&(delay, _)) if delay > 0 => {
                    next.pending.push(PendingUpdate { client: c, origin: round, deliver: round + delay, update })
                }
                _ => fresh.push((c, round, update)),
            }
        }
        let mut contributions: Vec<(usize, u64, SparseGradient)> =
            fresh.into_iter().chain(arriving.into_iter().map(|p| (p.client, p.origin, p.update))).collect();
        contributions.sort_by_key(|(c, origin, _)| (*c, *origin));

        let agg = self.aggregate(&contributions, d, round);
        let mut trace = RoundTrace {
            contributions: contributions.iter().map(|(c, _, g)| (*c, g.clone())).collect(),
            aggregate: None,
        };
        let max_train = on_time.iter().map(|&c| self.clients[c].len()).max().unwrap_or(0);
        match agg {
            Ok(agg) => {
                for (w, g) in next.model.weights.iter_mut().zip(&agg.mean) {
                    *w += g;
                }
                next.completed_rounds += 1;
                trace.aggregate = Some(agg.mean.clone());
                let metrics = model::evaluate(&next.model, &self.test)?;
                let wall_time = self.simulated_time(&agg, max_train, &latency);
                let report = RoundReport {
                    round,
                    outcome: RoundOutcome::Completed,
                    global_accuracy: metrics.accuracy,
                    f1: metrics.f1,
                    loss: metrics.loss,
                    bytes_up_per_client: agg.bytes_up.iter().copied().max().unwrap_or(0),
                    bytes_up_total: agg.bytes_up.iter().sum(),
                    bytes_down_total: agg.bytes_down_each * on_time.len() as u64,
                    bytes_up_by_client: agg.bytes_up,
                    epsilon_cumulative: cfg.epsilon_after(next.completed_rounds)?,
                    participating_clients: on_time,
                    contributors: contributions.iter().map(|(c, o, _)| (*c, *o)).collect(),
                    stale_dropped,
                    ciphertexts: agg.ciphertexts,
                    union_size: agg.union_size,
                    clip_range: agg.clip_range,
                    wall_time,
                    measured_seconds: cfg.measure_wall_time.then(|| started.elapsed().as_secs_f64()),
                    he_decryption_ok: true,
                };
                Ok((next, report, trace))
            }
            Err(e @ (Error::ScaleMismatch(_) | Error::DecryptionOverflow { .. } | Error::EncodingOverflow { .. })) => {
                // The released updates left the clients, so the round
                // still costs privacy; the model and error memories are
                // rolled back.
                let mut rolled = state.clone();
                rolled.pending = next.pending.clone();
                rolled.completed_rounds += 1;
                let mut report = self.report_without_update(
                    &rolled,
                    round,
                    RoundOutcome::Aborted { reason: e.to_string() },
                    on_time,
                    stale_dropped,
                    started,
                )?;
                report.he_decryption_ok = false;
                report.contributors = contributions.iter().map(|(c, o, _)| (*c, *o)).collect();
                Ok((rolled, report, trace))
            }
            Err(e) => Err(e),
        }
    }

    fn report_without_update(
        &self,
        state: &FlState,
        round: u64,
        outcome: RoundOutcome,
        participating: Vec<usize>,
        stale_dropped: usize,
        started: Instant,
    ) -> Result<RoundReport> {
        let metrics = model::evaluate(&state.model, &self.test)?;
        Ok(RoundReport {
            round,
            outcome,
            global_accuracy: metrics.accuracy,
            f1: metrics.f1,
            loss: metrics.loss,
            bytes_up_per_client: 0,
            bytes_up_total: 0,
            bytes_down_total: 0,
            bytes_up_by_client: Vec::new(),
            epsilon_cumulative: self.cfg.epsilon_after(state.completed_rounds)?,
            participating_clients: participating,
            contributors: Vec::new(),
            stale_dropped,
            ciphertexts: 0,
            union_size: 0,
            clip_range: 0.0,
            wall_time: 0.0,
            measured_seconds: self.cfg.measure_wall_time.then(|| started.elapsed().as_secs_f64()),
            he_decryption_ok: true,
        })
    }

    fn simulated_time(&self, agg: &Aggregate, max_train_samples: usize, latency: &BTreeMap<usize, (u64, f64)>) -> f64 {
        let c = &self.cfg.cost;
        let per_client_cts = if agg.contributors == 0 { 0 } else { agg.ciphertexts / agg.contributors };
        let slowest_latency = latency.values().filter(|l| l.0 == 0).map(|l| l.1).fold(0.0, f64::max);
        let client = max_train_samples as f64 * self.cfg.local_epochs as f64 * c.train_per_sample
            + per_client_cts as f64 * c.encrypt_per_ciphertext
            + agg.bytes_up.iter().copied().max().unwrap_or(0) as f64 / c.bandwidth
            + slowest_latency;
        let server = agg.ciphertexts as f64 * c.add_per_ciphertext + per_client_cts as f64 * c.decrypt_per_ciphertext;
        client + server + agg.bytes_down_each as f64 / c.bandwidth
    }

    /// Server-side aggregation of released updates, including the
    /// metadata exchange and client-side packing and encryption.
    fn aggregate(&self, contributions: &[(usize, u64, SparseGradient)], d: usize, round: u64) -> Result<Aggregate> {
        let cfg = &self.cfg;
        let m = &cfg.mechanisms;
        let n = contributions.len();
        let plain_value_bytes = crate::accounting::PLAIN_VALUE_BYTES;

        // Metadata: retained index sets and per-client max |v|.
        let union: Vec<u32> = if m.sparsification {
            let mut mask = vec![false; d];
            for (_, _, g) in contributions {
                for (i, v) in g.values.iter().enumerate() {
                    if *v != 0.0 {
                        mask[i] = true;
                    }
                }
            }
            (0..d as u32).filter(|&i| mask[i as usize]).collect()
        } else {
            (0..d as u32).collect()
        };
        let index_bytes: Vec<u64> = contributions
            .iter()
            .map(|(_, _, g)| if m.sparsification { index_stream_bytes(&g.indices()) } else { 0 })
            .collect();
        let union_bytes = if m.sparsification { index_stream_bytes(&union) } else { 0 };
        let max_abs = contributions
            .iter()
            .flat_map(|(_, _, g)| g.values.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let gathered: Vec<Vec<f64>> =
            contributions.iter().map(|(_, _, g)| union.iter().map(|&i| g.values[i as usize]).collect()).collect();

        let mut pc = cfg.he.packing;
        let off = pc.offset() as f64;
        // Slightly above max |v| so the largest value quantizes without
        // saturating.
        pc.clip_range = if max_abs > 0.0 { max_abs * off / (off - 1.0) } else { 1.0 };
        let metadata_bytes = 8;

        let u = union.len();
        let mut ciphertexts = 0;
        let mut bytes_up: Vec<u64> = Vec::with_capacity(n);
        let sum: Vec<f64> = match (m.packing, m.encryption) {
            (false, false) => {
                for ib in &index_bytes {
                    bytes_up.push(u as u64 * plain_value_bytes + ib + if m.sparsification { metadata_bytes } else { 0 });
                }
                let mut s = vec![0.0; u];
                for v in &gathered {
                    for (a, b) in s.iter_mut().zip(v) {
                        *a += b;
                    }
                }
                s
            }
            (true, enc) => {
                let packed: Vec<Vec<f64>> =
                    gathered.par_iter().map(|v| pack_lanes(v, &pc, cfg.n_clients)).collect::<Result<_>>()?;
                let slots_total = pc.slots_for(u);
                let slot_sum: Vec<f64> = if enc {
                    let (sums, cts) = self.encrypted_sum(&packed, contributions, cfg.he.params.scale_log2, round)?;
                    ciphertexts = cts.1;
                    for ib in &index_bytes {
                        bytes_up.push(cts.0 + ib + metadata_bytes);
                    }
                    sums
                } else {
                    let slot_bytes = u64::from(pc.packed_bits().div_ceil(8));
                    for ib in &index_bytes {
                        bytes_up.push(slots_total as u64 * slot_bytes + ib + metadata_bytes);
                    }
                    let mut s = vec![0.0; slots_total];
                    for p in &packed {
                        for (a, b) in s.iter_mut().zip(p) {
                            *a += b;
                        }
                    }
                    s
                };
                let q = unpack_sum(&slot_sum, &pc, u, n)?;
                q.into_iter().map(|x| pc.dequantize(x)).collect()
            }
            (false, true) => {
                let (sums, cts) = self.encrypted_sum(&gathered, contributions, cfg.he.raw_scale_log2, round)?;
                ciphertexts = cts.1;
                for ib in &index_bytes {
                    bytes_up.push(cts.0 + ib + metadata_bytes);
                }
                sums[..u].to_vec()
            }
        };

        let mut mean = vec![0.0; d];
        for (&i, s) in union.iter().zip(&sum) {
            mean[i as usize] = s / n as f64;
        }
        Ok(Aggregate {
            mean,
            bytes_up,
            bytes_down_each: d as u64 * plain_value_bytes + union_bytes + if m.sparsification { metadata_bytes } else { 0 },
            ciphertexts,
            union_size: u,
            clip_range: if m.packing { pc.clip_range } else { 0.0 },
            contributors: n,
        })
    }

    /// Encrypts each contribution in chunks of N/2 slots, adds the
    /// ciphertexts in contribution order and decrypts. Returns the summed
    /// slot values and (per-client wire bytes, total ciphertexts).
    fn encrypted_sum(
        &self,
        vectors: &[Vec<f64>],
        contributions: &[(usize, u64, SparseGradient)],
        scale_log2: u32,
        round: u64,
    ) -> Result<(Vec<f64>, (u64, usize))> {
        let (ctx, keys) = self.he.as_ref().ok_or_else(|| Error::contract("encryption requested without keys"))?;
        let chunk = ctx.slot_count();
        let encrypted: Vec<Vec<Ciphertext>> = vectors
            .par_iter()
            .zip(contributions)
            .map(|(v, (c, origin, _))| -> Result<Vec<Ciphertext>> {
                let faulty = matches!(self.cfg.fault, Some(Fault::ScaleMismatch { round: r, client }) if r == round && client == *c);
                let scale = if faulty { scale_log2 + 1 } else { scale_log2 };
                v.chunks(chunk)
                    .enumerate()
                    .map(|(j, part)| {
                        let pt = ctx.encode_at(part, scale)?;
                        let seed = derive_seed(self.cfg.seed, Stream::Encrypt, *origin, ((*c as u64) << 32) | j as u64);
                        Ok(he::encrypt(&pt, &keys.public, ctx, seed))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let per_client = encrypted.first().map_or(0, |v| v.len());
        let wire: u64 = encrypted
            .first()
            .map_or(0, |v| v.iter().map(|ct| (HEADER_BYTES + ct.payload_bytes()) as u64).sum());
        let mut acc: Vec<Ciphertext> = encrypted[0].clone();
        for client_cts in &encrypted[1..] {
            for (a, b) in acc.iter_mut().zip(client_cts) {
                *a = he::add_ciphertexts(a, b, ctx)?;
            }
        }
        let mut out = Vec::with_capacity(per_client * chunk);
        for ct in &acc {
            out.extend(he::decrypt(ct, &keys.secret, ctx)?);
        }
        Ok((out, (wire, per_client * vectors.len())))
    }
}

struct Aggregate {
    mean: Vec<f64>,
    bytes_up: Vec<u64>,
    bytes_down_each: u64,
    ciphertexts: usize,
    union_size: usize,
    clip_range: f64,
    contributors: usize,
}

/// Clients that respond this round: each drops independently with the
/// configured probability, drawn from a per-round stream.
pub fn simulate_dropout(cfg: &FlConfig, round: u64) -> Vec<usize> {
    let mut rng = stream_rng(cfg.seed, Stream::Dropout, round, 0);
    (0..cfg.n_clients)
        .filter(|_| {
            let u: f64 = rng.random();
            u >= cfg.dropout_probability
        })
        .collect()
}

/// Per available client: (rounds late, sampled latency). Empty when no
/// latency model is configured.
fn simulate_latency(cfg: &FlConfig, round: u64, available: &[usize]) -> BTreeMap<usize, (u64, f64)> {
    let Some(model) = cfg.latency else { return BTreeMap::new() };
    let Ok(exp) = Exp::new(1.0 / model.mean) else { return BTreeMap::new() };
    let mut rng = stream_rng(cfg.seed, Stream::Latency, round, 0);
    available
        .iter()
        .map(|&c| {
            let l: f64 = exp.sample(&mut rng);
            (c, ((l / cfg.client_timeout).floor() as u64, l.min(cfg.client_timeout)))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub reports: Vec<RoundReport>,
    pub model: Model,
    /// Union of client training shards (the member set).
    pub train: Dataset,
    pub test: Dataset,
}

impl ExperimentResult {
    pub fn final_report(&self) -> &RoundReport {
        self.reports.last().expect("at least one round")
    }

    pub fn all_rounds_failed(&self) -> bool {
        self.reports.iter().all(|r| !r.completed())
    }
}

pub fn run_experiment(cfg: &FlConfig) -> Result<ExperimentResult> {
    let env = FlEnv::new(cfg.clone())?;
    let mut state = env.initial_state();
    let mut reports = Vec::with_capacity(cfg.rounds as usize);
    for round in 1..=cfg.rounds {
        let (next, report, _) = env.run_round(&state, round)?;
        state = next;
        reports.push(report);
    }
    Ok(ExperimentResult { reports, model: state.model, train: env.train, test: env.test })
}

/// Runs one experiment per seed, in parallel.
pub fn run_trials(cfg: &FlConfig, seeds: &[u64]) -> Result<Vec<ExperimentResult>> {
    seeds.par_iter().map(|&s| run_experiment(&FlConfig { seed: s, ..cfg.clone() })).collect()
}
