//! Acceptance run: nine checks, each printed as one PASS/FAIL line with
//! its runtime against the budget. Exits nonzero if any check fails.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use sparsehe::accounting::{mb_display, percent_display, reference_breakdown};
use sparsehe::attacks::{mia_comparison, OverfitConfig};
use sparsehe::convergence::{run_suite, ConvergenceConfig};
use sparsehe::dp::{epsilon_report, sigma_for_epsilon, DpConfig, LogConvention, QUOTED_INTERMEDIATE};
use sparsehe::fl::{run_experiment, FlConfig, FlEnv, HeSettings, Mechanisms, PrivacySettings};
use sparsehe::he::packing::{pack_codes, pack_lanes, unpack_codes, unpack_sum};
use sparsehe::he::{self, add_ciphertexts, decrypt, encrypt, CkksContext, CkksParams, PackingConfig, SlotModel};
use sparsehe::manifest::{standard_ablations, Experiment, Manifest};
use sparsehe::model::{self, Architecture, GradientVector, SyntheticSpec};
use sparsehe::rng::{derive_seed, rng_from, Stream};
use sparsehe::runner::{run_manifest, ttest_summaries, RunOptions};
use sparsehe::sparsifier::{sparsify, SparsifierConfig, SparsifierState};
use sparsehe::stats::median;

const SEEDS: [u64; 5] = [42, 43, 44, 45, 46];

struct Check {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: impl Into<String>) -> Check {
    Check { passed, detail: detail.into() }
}

fn desk_setup() -> FlConfig {
    FlConfig { rounds: 10, ..FlConfig::default() }
}

fn c1_accounting() -> Check {
    let b = reference_breakdown(SlotModel::FullRing);
    let got = (
        b.k,
        b.ciphertexts,
        mb_display(b.ciphertext_bytes, 2),
        mb_display(b.per_client_bytes, 1),
        mb_display(b.baseline_per_client_bytes, 1),
        percent_display(b.reduction_fraction, 1),
        mb_display(b.per_client_bytes * 5, 1),
    );
    let want = (6_695_501u64, 13u64, "0.47", "6.1", "255.4", "97.6", "30.5");
    let ok = got.0 == want.0
        && got.1 == want.1
        && got.2 == want.2
        && got.3 == want.3
        && got.4 == want.4
        && got.5 == want.5
        && got.6 == want.6;
    check(ok, format!("k={} cts={} {} MB/ct {} MB/client baseline {} MB {}% total {} MB", got.0, got.1, got.2, got.3, got.4, got.5, got.6))
}

fn c2_dp() -> Check {
    let cfg = DpConfig { sensitivity: 1.0, sigma: 1.0, delta: 1e-5, rounds: 3, sparsity: 0.9, log_convention: LogConvention::Natural, ..DpConfig::default() };
    let r = epsilon_report(&cfg, Some(QUOTED_INTERMEDIATE)).unwrap();
    let sigma = sigma_for_epsilon(1.0, 0.9, 1.0, 3).unwrap();
    let ok = r.statement_natural < 1.0
        && r.statement_base10 < 1.0
        && (r.statement_natural - 0.98).abs() < 0.005
        && (r.statement_base10 - 0.70).abs() < 0.005
        && (sigma - 0.1225).abs() <= 0.0005
        && r.quoted_reproducible == Some(false);
    check(
        ok,
        format!(
            "eps natural {:.4} base-10 {:.4}; sigma(eps=1) {:.4}; quoted {} flagged unreproducible (8.31 / 5.48)",
            r.statement_natural, r.statement_base10, sigma, QUOTED_INTERMEDIATE
        ),
    )
}

/// Random dyadic gradient: integers over 2^10, so every sum below is
/// exact in f64 and the summation order cannot matter.
fn dyadic(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-(1i64 << 20)..=(1i64 << 20)) as f64 / 1024.0).collect()
}

fn c3_conservation() -> Check {
    let (d, t_max, per_s) = (10_000, 20, 1000);
    let grid = [0.5, 0.9, 0.99];
    let failures: usize = grid
        .iter()
        .map(|&s| {
            (0..per_s)
                .into_par_iter()
                .filter(|&traj| {
                    let cfg = SparsifierConfig { sparsity: s, alpha: 0.7, error_feedback: true, adaptive_threshold: true };
                    let mut rng = rng_from(derive_seed(traj as u64, Stream::Gradient, (s * 100.0) as u64, 0));
                    let mut state = SparsifierState::new(d);
                    let mut sum_g = vec![0.0; d];
                    let mut sum_sparse = vec![0.0; d];
                    for _ in 0..t_max {
                        let g = dyadic(d, &mut rng);
                        let (sp, next) = sparsify(&GradientVector { values: g.clone() }, &cfg, &state).unwrap();
                        for i in 0..d {
                            if sp.values[i] + next.error[i] != g[i] + state.error[i] {
                                return true;
                            }
                            sum_g[i] += g[i];
                            sum_sparse[i] += sp.values[i];
                        }
                        state = next;
                    }
                    (0..d).any(|i| sum_sparse[i] != sum_g[i] - state.error[i])
                })
                .count()
        })
        .sum();
    check(failures == 0, format!("{} trajectories x d={d} x T={t_max}, {failures} violations", per_s * grid.len()))
}

fn c4_he() -> Check {
    let ctx = CkksContext::new(CkksParams::desk()).unwrap();
    let slots = ctx.slot_count();
    let (roundtrip, pair_sum) = (0..1000u64)
        .into_par_iter()
        .map(|trial| {
            let keys = he::keygen(&ctx, trial);
            let mut rng = rng_from(1_000_000 + trial);
            let a: Vec<f64> = (0..slots).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..slots).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ca = encrypt(&ctx.encode(&a).unwrap(), &keys.public, &ctx, 2 * trial);
            let cb = encrypt(&ctx.encode(&b).unwrap(), &keys.public, &ctx, 2 * trial + 1);
            let da = decrypt(&ca, &keys.secret, &ctx).unwrap();
            let dab = decrypt(&add_ciphertexts(&ca, &cb, &ctx).unwrap(), &keys.secret, &ctx).unwrap();
            let e1 = a.iter().zip(&da).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let e2 = (0..slots).map(|i| (a[i] + b[i] - dab[i]).abs()).fold(0.0, f64::max);
            (e1, e2)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0.max(y.0), x.1.max(y.1)));

    let five_way = (0..100u64)
        .into_par_iter()
        .map(|trial| {
            let keys = he::keygen(&ctx, 10_000 + trial);
            let mut rng = rng_from(2_000_000 + trial);
            let vs: Vec<Vec<f64>> = (0..5).map(|_| (0..slots).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let mut acc = encrypt(&ctx.encode(&vs[0]).unwrap(), &keys.public, &ctx, trial * 5);
            for (j, v) in vs.iter().enumerate().skip(1) {
                let c = encrypt(&ctx.encode(v).unwrap(), &keys.public, &ctx, trial * 5 + j as u64);
                acc = add_ciphertexts(&acc, &c, &ctx).unwrap();
            }
            let dec = decrypt(&acc, &keys.secret, &ctx).unwrap();
            (0..slots).map(|i| (vs.iter().map(|v| v[i]).sum::<f64>() - dec[i]).abs()).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);

    // Integer lane arithmetic at the guard-bit capacity, then the same
    // layout through encryption with five clients.
    let pc = PackingConfig { lanes: 2, lane_bits: 8, guard_bits: 8, clip_range: 1.0 };
    let n_max = 1usize << pc.guard_bits;
    let mut rng = rng_from(7);
    let len = 301;
    let mut packed_sum = vec![0u64; pc.slots_for(len)];
    let mut lane_sum = vec![0u64; len];
    for _ in 0..n_max {
        let codes: Vec<u64> = (0..len).map(|_| rng.random_range(0..(1u64 << pc.lane_bits))).collect();
        for (s, p) in packed_sum.iter_mut().zip(pack_codes(&codes, &pc)) {
            *s += p;
        }
        for (s, c) in lane_sum.iter_mut().zip(&codes) {
            *s += c;
        }
    }
    let integer_exact = unpack_codes(&packed_sum, &pc, len) == lane_sum;

    let pctx = CkksContext::new(CkksParams::desk_packing()).unwrap();
    let keys = he::keygen(&pctx, 99);
    let values: Vec<Vec<f64>> = (0..5).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut acc = None;
    for (j, v) in values.iter().enumerate() {
        let slots = pack_lanes(v, &pc, 5).unwrap();
        let c = encrypt(&pctx.encode(&slots).unwrap(), &keys.public, &pctx, 500 + j as u64);
        acc = Some(match acc {
            None => c,
            Some(a) => add_ciphertexts(&a, &c, &pctx).unwrap(),
        });
    }
    let dec = decrypt(&acc.unwrap(), &keys.secret, &pctx).unwrap();
    let sums = unpack_sum(&dec, &pc, len, 5).unwrap();
    let expected: Vec<i64> = (0..len).map(|i| values.iter().map(|v| pc.quantize(v[i])).sum()).collect();
    let he_lanes_exact = sums == expected;

    let ok = roundtrip.max(pair_sum) <= 1e-5 && five_way <= 5e-5 && integer_exact && he_lanes_exact;
    check(
        ok,
        format!(
            "round-trip {roundtrip:.2e}, pair sum {pair_sum:.2e}, 5-way {five_way:.2e}, lanes exact for {n_max} summands: {integer_exact}, through HE: {he_lanes_exact}"
        ),
    )
}

fn c5_pipeline() -> Check {
    let d_features = 1999;
    let cfg = FlConfig {
        n_clients: 5,
        rounds: 3,
        architecture: Architecture::Logistic { inputs: d_features },
        data: SyntheticSpec { n_samples: 1000, n_features: d_features, separation: 2.5 },
        dirichlet_alpha: 1.0,
        he: HeSettings::lossless(),
        privacy: PrivacySettings { sigma: 0.0, ..PrivacySettings::default() },
        ..FlConfig::default()
    };
    let env = FlEnv::new(cfg.clone()).unwrap();
    let mut state = env.initial_state();
    let d = state.model.dim();
    let sp = cfg.sparsifier();
    let mut oracle_w = state.model.weights.clone();
    let mut oracle_mem: Vec<SparsifierState> = vec![SparsifierState::new(d); cfg.n_clients];
    let mut worst = 0.0f64;
    for round in 1..=cfg.rounds {
        // Plaintext FedAvg from the same starting weights and seeds.
        let start = model::Model::with_weights(cfg.architecture, oracle_w.clone()).unwrap();
        let mut sum = vec![0.0; d];
        for c in 0..cfg.n_clients {
            let trained =
                model::local_train(&start, &env.clients[c], &cfg.train_config(), derive_seed(cfg.seed, Stream::Train, round, c as u64))
                    .unwrap();
            let update: Vec<f64> = trained.weights.iter().zip(&start.weights).map(|(a, b)| a - b).collect();
            let (g, mem) = sparsify(&GradientVector { values: update }, &sp, &oracle_mem[c]).unwrap();
            oracle_mem[c] = mem;
            let norm = g.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if norm > cfg.privacy.clip_norm { cfg.privacy.clip_norm / norm } else { 1.0 };
            for (s, v) in sum.iter_mut().zip(&g.values) {
                *s += v * scale;
            }
        }
        for (w, s) in oracle_w.iter_mut().zip(&sum) {
            *w += s / cfg.n_clients as f64;
        }
        let (next, report, _) = env.run_round(&state, round).unwrap();
        assert!(report.completed() && report.ciphertexts > 0);
        state = next;
        worst = worst.max(state.model.weights.iter().zip(&oracle_w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    check(worst <= 1e-6, format!("d={d}, 5 clients, {} rounds, max |w - w_oracle| = {worst:.2e}", cfg.rounds))
}

fn fl_manifest(cfg: FlConfig) -> Manifest {
    Manifest { schema_version: 1, seeds: SEEDS.to_vec(), output_dir: None, experiment: Experiment::FlRun(cfg) }
}

fn c6_learning(out: &std::path::Path) -> Check {
    let opts = RunOptions { out_root: out.to_path_buf(), threads: None };
    let private = run_manifest(&fl_manifest(desk_setup()), &opts).unwrap();
    let standard = run_manifest(&fl_manifest(FlConfig { mechanisms: Mechanisms::plain(), ..desk_setup() }), &opts).unwrap();
    let med = |v: &serde_json::Value| v["final_accuracy"]["median"].as_f64().unwrap();
    let read = |dir: &std::path::Path| sparsehe::runner::read_json(&dir.join("summary.json")).unwrap();
    let (a, b) = (read(&private.dir), read(&standard.dir));
    let t = ttest_summaries(&a, &b).unwrap();
    let gap = (med(&a) - med(&b)).abs();
    check(
        gap <= 0.02 && t.test.p_value > 0.05,
        format!("median accuracy {:.4} vs standard {:.4} (gap {:.2} pp), paired t = {:.3}, p = {:.3}", med(&a), med(&b), gap * 100.0, t.test.t, t.test.p_value),
    )
}

fn c7_ablation() -> Check {
    let variants = standard_ablations();
    let loss_of = |name: &str| {
        let m = variants.iter().find(|v| v.name == name).unwrap().mechanisms;
        let losses: Vec<f64> = SEEDS
            .par_iter()
            .map(|&s| run_experiment(&FlConfig { seed: s, mechanisms: m, ..desk_setup() }).unwrap().final_report().loss)
            .collect();
        median(&losses)
    };
    let (full, no_tau, no_ef) = (loss_of("full"), loss_of("no_adaptive_threshold"), loss_of("no_error_feedback"));

    let lossless = FlConfig { he: HeSettings::lossless(), privacy: PrivacySettings { sigma: 0.0, ..PrivacySettings::default() }, ..desk_setup() };
    let mut same_trajectory = true;
    let mut bytes_differ = true;
    for &s in &SEEDS {
        let with = run_experiment(&FlConfig { seed: s, ..lossless.clone() }).unwrap();
        let without = run_experiment(&FlConfig {
            seed: s,
            mechanisms: Mechanisms { encryption: false, ..Mechanisms::full() },
            ..lossless.clone()
        })
        .unwrap();
        same_trajectory &= with.reports.iter().zip(&without.reports).all(|(a, b)| a.global_accuracy == b.global_accuracy && a.loss == b.loss);
        bytes_differ &= with.reports[0].bytes_up_total != without.reports[0].bytes_up_total;
    }
    check(
        full <= no_tau && full <= no_ef && same_trajectory && bytes_differ,
        format!(
            "median final loss full {full:.4}, no_adaptive_threshold {no_tau:.4}, no_error_feedback {no_ef:.4}; without HE: same trajectory {same_trajectory}, bytes differ {bytes_differ}"
        ),
    )
}

fn c8_mia() -> Check {
    let rows: Vec<_> = SEEDS.par_iter().map(|&s| mia_comparison(&desk_setup(), &OverfitConfig::default(), s).unwrap()).collect();
    let private = median(&rows.iter().map(|r| r.private.attack_success_rate).collect::<Vec<_>>());
    let overfit = median(&rows.iter().map(|r| r.overfit.attack_success_rate).collect::<Vec<_>>());
    check(
        (0.45..=0.58).contains(&private) && private < overfit,
        format!("median attack success {private:.4} (band [0.45, 0.58]), overfit baseline {overfit:.4}"),
    )
}

fn c9_convergence() -> Check {
    let cfg = ConvergenceConfig::default();
    let suite = run_suite(&cfg, &SEEDS).unwrap();
    let ok = suite.iter().all(|p| p.median_slope <= -0.35 && p.feedback_gain >= 1.5);
    let parts: Vec<String> =
        suite.iter().map(|p| format!("h_min {}: slope {:.3}, no-feedback/feedback {:.2}x", p.h_min, p.median_slope, p.feedback_gain)).collect();
    check(ok, format!("s={}, T={}; {}", cfg.sparsity, cfg.steps, parts.join("; ")))
}

fn main() {
    let out = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Check>)> = vec![
        ("1 communication accounting", Duration::from_secs(1), Box::new(c1_accounting)),
        ("2 privacy bound", Duration::from_secs(1), Box::new(c2_dp)),
        ("3 sparsifier conservation", Duration::from_secs(30), Box::new(c3_conservation)),
        ("4 HE correctness", Duration::from_secs(120), Box::new(c4_he)),
        ("5 pipeline equivalence", Duration::from_secs(60), Box::new(c5_pipeline)),
        ("6 desk-scale learning", Duration::from_secs(600), Box::new(move || c6_learning(out.path()))),
        ("7 ablation orderings", Duration::from_secs(900), Box::new(c7_ablation)),
        ("8 membership inference", Duration::from_secs(600), Box::new(c8_mia)),
        ("9 convergence rate", Duration::from_secs(300), Box::new(c9_convergence)),
    ];
    let mut failed = 0;
    for (name, budget, run) in &criteria {
        let t0 = Instant::now();
        let c = run();
        let elapsed = t0.elapsed();
        let pass = c.passed && elapsed <= *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {} [{:.2}s / budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            c.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
