mod common;

use proptest::prelude::*;

use szo::numerics::{softmax_rows, Matrix, RngState};
use szo::optimizer::{adadelta_step, clip_gradients, AdadeltaConfig, AdadeltaState};
use szo::sflstm::{
    advance, one_hot, prediction_error, sample_update_mask, surprisal_vector, MaskSource, ModelParams,
    RecurrentState, Variant,
};
use szo::training::checkpoint::{decode_checkpoint, encode_checkpoint};
use szo::training::corpus::split_ranges;
use szo::training::{Corpus, TrainConfig, Trainer};

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix<f64> {
    let mut rng = RngState::new(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform_in(lo, hi)).collect()).unwrap()
}

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![
        Just(Variant::Standard),
        Just(Variant::SurprisalFeedback),
        (0.0f64..=1.0).prop_map(Variant::FixedZoneout),
        Just(Variant::Adaptive),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..40, scale in 0.1f64..800.0, seed in any::<u64>()) {
        let p = softmax_rows(&matrix(rows, cols, -scale, scale, seed));
        for r in 0..rows {
            let row = p.row(r);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn surprisal_and_error_are_sparse(batch in 1usize..5, m in 2usize..20, seed in any::<u64>()) {
        let p = softmax_rows(&matrix(batch, m, -5.0, 5.0, seed));
        let mut rng = RngState::new(seed ^ 1);
        let targets: Vec<usize> = (0..batch).map(|_| rng.below(m)).collect();
        let x = one_hot::<f64>(&targets, m).unwrap();
        let s = surprisal_vector(&p, &x).unwrap();
        let e = prediction_error(&p, &x).unwrap();
        for (r, &t) in targets.iter().enumerate() {
            for k in 0..m {
                if k == t {
                    prop_assert_eq!(s.get(r, k), p.get(r, k).ln());
                    prop_assert!(e.get(r, k) <= 0.0);
                } else {
                    prop_assert_eq!(s.get(r, k), 0.0);
                    prop_assert_eq!(e.get(r, k), p.get(r, k));
                }
            }
        }
    }

    #[test]
    fn masks_are_binary_and_respect_certain_rates(n in 1usize..200, seed in any::<u64>()) {
        let mut z = matrix(1, n, 0.0, 1.0, seed);
        z.set(0, 0, 0.0);
        if n > 1 {
            z.set(0, 1, 1.0);
        }
        let mask = sample_update_mask(&z, &mut RngState::new(seed)).unwrap();
        prop_assert!(mask.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(mask.get(0, 0), 0.0);
        if n > 1 {
            prop_assert_eq!(mask.get(0, 1), 1.0);
        }
    }

    #[test]
    fn clipping_never_increases_the_norm(scale in 1e-3f64..1e3, max_norm in 0.0f64..20.0, seed in any::<u64>()) {
        let mut g: ModelParams<f64> = common::random_params(6, 5, Variant::Adaptive, 0.05, seed);
        for b in g.weights.blocks_mut() {
            b.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        }
        let mut grads = g.weights;
        let before = grads.global_norm();
        let reported = clip_gradients(&mut grads, max_norm);
        let after = grads.global_norm();
        prop_assert_eq!(reported, before);
        prop_assert!(after <= before * (1.0 + 1e-12));
        if max_norm > 0.0 {
            prop_assert!(after <= max_norm * (1.0 + 1e-12));
        }
    }

    #[test]
    fn adadelta_accumulators_stay_nonnegative(steps in 1usize..8, lr in 1e-3f64..2.0, v in variant(), seed in any::<u64>()) {
        let mut params: ModelParams<f64> = common::random_params(5, 4, v, 0.05, seed);
        let mut state = AdadeltaState::new(&params.weights, AdadeltaConfig { lr, ..AdadeltaConfig::default() });
        for k in 0..steps {
            let grads = common::random_params::<f64>(5, 4, v, 0.05, seed.wrapping_add(k as u64 + 1)).weights;
            adadelta_step(&mut params, &grads, &mut state).unwrap();
        }
        for b in state.sq_grad.blocks().into_iter().chain(state.sq_update.blocks()) {
            prop_assert!(b.as_slice().iter().all(|&x| x >= 0.0 && x.is_finite()));
        }
        prop_assert!(params.is_finite());
    }

    #[test]
    fn forward_states_stay_in_range(v in variant(), tau in 0.0f64..1.0, seed in any::<u64>()) {
        let (batch, n, m) = (3, 7, 6);
        let params: ModelParams<f64> = common::random_params(n, m, v, tau, seed);
        let mut state = RecurrentState::initial(batch, n, m);
        let mut rng = RngState::new(seed);
        for x in common::random_stream(40, batch, m, seed) {
            let (next, cache) = advance(&state, &x, &params, MaskSource::Sampled(&mut rng), None).unwrap();
            prop_assert!(cache.h.as_slice().iter().all(|&h| h.abs() <= 1.0));
            prop_assert!(cache.rate.as_slice().iter().all(|&z| (0.0..=1.0).contains(&z)));
            for r in 0..batch {
                prop_assert!((cache.p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            // lanes whose mask is zero keep their cell exactly
            for j in 0..batch * n {
                if cache.mask.as_slice()[j] == 0.0 {
                    prop_assert_eq!(cache.c.as_slice()[j].to_bits(), cache.c_prev.as_slice()[j].to_bits());
                }
            }
            state = next;
        }
    }

    #[test]
    fn splits_partition_the_stream(len in 0usize..100_000) {
        let [train, valid, test] = split_ranges(len);
        prop_assert_eq!(train.start, 0);
        prop_assert_eq!(train.end, valid.start);
        prop_assert_eq!(valid.end, test.start);
        prop_assert_eq!(test.end, len);
        prop_assert_eq!(train.len(), len * 9 / 10);
        prop_assert_eq!(valid.len(), len / 20);
    }

    #[test]
    fn encoding_round_trips(bytes in proptest::collection::vec(any::<u8>(), 1..2000)) {
        let corpus = Corpus::from_bytes(bytes.clone()).unwrap();
        prop_assert!(corpus.vocab().windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(corpus.decode(corpus.symbols()), bytes.clone());
        prop_assert_eq!(corpus.encode(&bytes).unwrap(), corpus.symbols().to_vec());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn checkpoints_round_trip(steps in 0usize..4, v in variant(), seed in 1u64..1000) {
        let corpus = Corpus::from_bytes(common::synthetic_text(5000, seed)).unwrap();
        let cfg = TrainConfig {
            hidden: 6,
            batch: 2,
            seq_len: 5,
            chunk_len: 20,
            variant: v,
            seed,
            ..TrainConfig::default()
        };
        let mut t = Trainer::<f64>::new(cfg, corpus.vocab_size()).unwrap();
        for _ in 0..steps {
            t.step(corpus.split(szo::training::Split::Train)).unwrap();
        }
        let bytes = encode_checkpoint(&t.checkpoint(corpus.vocab())).unwrap();
        let back = decode_checkpoint::<f64>(&bytes).unwrap();
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        prop_assert_eq!(back.params.weights.checksum(), t.params.weights.checksum());
    }
}
