use proptest::prelude::*;
use sparsehe::dp::{epsilon_for, DpConfig, LogConvention};
use sparsehe::fl::{run_experiment, FlConfig};
use sparsehe::he::ntt::{find_ntt_prime, schoolbook_negacyclic, NttTables};
use sparsehe::he::packing::{guard_bits_for, pack_codes, unpack_codes};
use sparsehe::he::{self, add_ciphertexts, decrypt, encrypt, CkksContext, CkksParams, PackingConfig};
use sparsehe::model::{partition_dirichlet_indices, Architecture, Dataset, Model, SyntheticSpec};
use sparsehe::sparsifier::{retained_count, sparsify, SparsifierConfig, SparsifierState};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lane_sums_never_carry(
        lanes in 1u32..5,
        lane_bits in 2u32..10,
        n in 1usize..40,
        seed in any::<u64>(),
        len in 1usize..50,
    ) {
        let guard = guard_bits_for(n);
        let pc = PackingConfig { lanes, lane_bits, guard_bits: guard, clip_range: 1.0 };
        prop_assume!(pc.packed_bits() <= 52);
        let mut rng = sparsehe::rng::rng_from(seed);
        let mut packed = vec![0u64; pc.slots_for(len)];
        let mut lane_sum = vec![0u64; len];
        for _ in 0..n {
            let codes: Vec<u64> = (0..len).map(|_| rand::Rng::random_range(&mut rng, 0..(1u64 << lane_bits))).collect();
            for (p, c) in packed.iter_mut().zip(pack_codes(&codes, &pc)) {
                *p += c;
            }
            for (s, c) in lane_sum.iter_mut().zip(&codes) {
                *s += c;
            }
        }
        prop_assert_eq!(unpack_codes(&packed, &pc, len), lane_sum);
    }

    #[test]
    fn quantization_error_within_half_step(v in -1.0f64..1.0, lane_bits in 2u32..25) {
        let pc = PackingConfig { lanes: 1, lane_bits, guard_bits: 0, clip_range: 1.0 };
        let step = pc.step();
        // The top code is offset - 1, so values above 1 - step saturate.
        prop_assume!(v <= 1.0 - step);
        prop_assert!((pc.dequantize(pc.quantize(v)) - v).abs() <= step / 2.0 + 1e-15);
    }

    #[test]
    fn ntt_matches_schoolbook(log_n in 1u32..6, seed in any::<u64>()) {
        let n = 1usize << log_n;
        let q = find_ntt_prime(30, n).unwrap();
        let t = NttTables::new(q, n).unwrap();
        let mut rng = sparsehe::rng::rng_from(seed);
        let a: Vec<u64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..q)).collect();
        let b: Vec<u64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..q)).collect();
        prop_assert_eq!(t.negacyclic_mul(&a, &b), schoolbook_negacyclic(&a, &b, q));
        let mut x = a.clone();
        t.forward(&mut x);
        t.inverse(&mut x);
        prop_assert_eq!(x, a);
    }

    #[test]
    fn sparsifier_conserves_every_round(
        d in 1usize..200,
        s in 0.0f64..=1.0,
        alpha in 0.0f64..1.0,
        rounds in 1usize..6,
        adaptive in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let cfg = SparsifierConfig { sparsity: s, alpha, error_feedback: true, adaptive_threshold: adaptive };
        let mut rng = sparsehe::rng::rng_from(seed);
        let mut state = SparsifierState::new(d);
        for t in 1..=rounds {
            let g: Vec<f64> = (0..d).map(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)).collect();
            let (sp, next) = sparsify(&g.clone().into(), &cfg, &state).unwrap();
            for i in 0..d {
                prop_assert_eq!(sp.values[i] + next.error[i], g[i] + state.error[i]);
                prop_assert!(sp.values[i] == 0.0 || next.error[i] == 0.0);
            }
            if t == 1 || !adaptive {
                // Continuous draws have no ties, so exactly k survive.
                prop_assert_eq!(sp.nnz as u64, retained_count(d as u64, s));
            }
            state = next;
        }
    }

    #[test]
    fn epsilon_is_monotone(
        sigma in 0.05f64..5.0,
        rounds in 1u64..50,
        s in 0.0f64..0.99,
        natural in any::<bool>(),
    ) {
        let log_convention = if natural { LogConvention::Natural } else { LogConvention::Base10 };
        let base = DpConfig { sensitivity: 1.0, sigma, delta: 1e-5, rounds, sparsity: s, log_convention, ..DpConfig::default() };
        let eps = |c: DpConfig| epsilon_for(&c).unwrap().epsilon;
        let e = eps(base);
        let more_noise = eps(DpConfig { sigma: sigma * 1.5, ..base });
        let more_rounds = eps(DpConfig { rounds: rounds + 1, ..base });
        let sparser = eps(DpConfig { sparsity: s + 0.01, ..base });
        prop_assert!(more_noise < e);
        prop_assert!(more_rounds > e);
        prop_assert!(sparser < e);
    }

    #[test]
    fn partition_is_exact_cover(n in 2usize..300, clients in 1usize..8, alpha in 0.05f64..10.0, seed in any::<u64>()) {
        prop_assume!(n >= clients);
        let labels: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let shards = partition_dirichlet_indices(&labels, clients, alpha, seed).unwrap();
        prop_assert_eq!(shards.len(), clients);
        prop_assert!(shards.iter().all(|s| !s.is_empty()));
        let mut all: Vec<usize> = shards.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn gradient_matches_finite_differences(seed in 0u64..1000, mlp in any::<bool>()) {
        let arch = if mlp { Architecture::Mlp { inputs: 4, hidden: 3 } } else { Architecture::Logistic { inputs: 4 } };
        let data: Dataset = SyntheticSpec { n_samples: 12, n_features: 4, separation: 1.0 }.generate(seed).unwrap();
        let m = Model::init(arch, seed);
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0; m.dim()];
        m.loss_and_grad(&m.weights, &data, &idx, 0.01, &mut grad);
        let h = 1e-6;
        let mut scratch = vec![0.0; m.dim()];
        for j in 0..m.dim() {
            let mut wp = m.weights.clone();
            let mut wm = m.weights.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (m.loss_and_grad(&wp, &data, &idx, 0.01, &mut scratch) - m.loss_and_grad(&wm, &data, &idx, 0.01, &mut scratch)) / (2.0 * h);
            prop_assert!((fd - grad[j]).abs() < 1e-6 * (1.0 + fd.abs()), "coordinate {}: {} vs {}", j, fd, grad[j]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn encryption_is_additively_homomorphic(seed in any::<u64>(), len in 1usize..512) {
        let ctx = CkksContext::new(CkksParams::desk()).unwrap();
        let keys = he::keygen(&ctx, seed);
        let mut rng = sparsehe::rng::rng_from(seed ^ 0xabc);
        let a: Vec<f64> = (0..len).map(|_| rand::Rng::random_range(&mut rng, -100.0..100.0)).collect();
        let b: Vec<f64> = (0..len).map(|_| rand::Rng::random_range(&mut rng, -100.0..100.0)).collect();
        let ca = encrypt(&ctx.encode(&a).unwrap(), &keys.public, &ctx, seed);
        let cb = encrypt(&ctx.encode(&b).unwrap(), &keys.public, &ctx, seed.wrapping_add(1));
        let sum = decrypt(&add_ciphertexts(&ca, &cb, &ctx).unwrap(), &keys.secret, &ctx).unwrap();
        for i in 0..len {
            prop_assert!((sum[i] - (a[i] + b[i])).abs() < 1e-5);
        }
        for v in &sum[len..] {
            prop_assert!(v.abs() < 1e-5);
        }
    }

    #[test]
    fn runs_are_deterministic(seed in 0u64..1000) {
        let cfg = FlConfig {
            n_clients: 3,
            min_quorum: 2,
            rounds: 2,
            seed,
            data: SyntheticSpec { n_samples: 200, n_features: 6, separation: 2.0 },
            architecture: Architecture::Logistic { inputs: 6 },
            sparsity: 0.5,
            dropout_probability: 0.2,
            ..FlConfig::default()
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        prop_assert_eq!(&a.model.weights, &b.model.weights);
        prop_assert_eq!(a.reports, b.reports);
    }
}
