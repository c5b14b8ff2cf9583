mod common;

use common::*;
use proptest::prelude::*;
use stance_core::corpus::{Post, StanceLabel};
use stance_core::encoder::{AggregatorKind, HistoryKind};
use stance_core::model::{
    adam_step, forward, gradients, loss, train_dataset, Dataset, ModelConfig, ModelParams, OptimizerState, Prediction,
    TrainConfig,
};
use stance_core::Error;

const VARIANTS: [(AggregatorKind, HistoryKind); 4] = [
    (AggregatorKind::Gat, HistoryKind::PositionEncoding),
    (AggregatorKind::Gat, HistoryKind::Mean),
    (AggregatorKind::Gcn, HistoryKind::PositionEncoding),
    (AggregatorKind::Gcn, HistoryKind::Mean),
];

#[test]
fn zero_parameters_give_uniform_probabilities() {
    let fx = fixture(6, 3, 4, 3, 1);
    let config = small_config(4, 3, 2, 3);
    let params = ModelParams::zeros(&config);
    let (post, _) = fx.targets()[0];
    let p = forward(post, &fx.inputs(), &params, &config).unwrap();
    assert_eq!(p.probs, [0.25; 4]);
    assert_eq!(p.label, StanceLabel::PO);
}

#[test]
fn prediction_tie_break_and_argmax() {
    assert_eq!(Prediction::from_probs([0.25; 4]).label, StanceLabel::PO);
    assert_eq!(Prediction::from_probs([0.7, 0.1, 0.1, 0.1]).label, StanceLabel::PO);
    assert_eq!(Prediction::from_probs([0.1, 0.2, 0.35, 0.35]).label, StanceLabel::NE);
}

#[test]
fn author_outside_graph_is_rejected() {
    let fx = fixture(4, 0, 4, 2, 2);
    let config = small_config(4, 3, 1, 2);
    let params = ModelParams::init(&config, 0);
    let stranger = Post::original("x", "nobody", 10, "hi");
    let mut store = fx.store.clone();
    store.insert("x", vec![0.0; 4]).unwrap();
    let mut inputs = fx.inputs();
    inputs.provider = &store;
    let err = forward(&stranger, &inputs, &params, &config).unwrap_err();
    assert!(matches!(err, Error::UserNotInGraph(_)));
    assert!(err.to_string().contains("user not in social graph"));
}

#[test]
fn forward_matches_reference_on_six_nodes() {
    let fx = fixture(6, 4, 5, 4, 3);
    for (aggregator, history) in VARIANTS {
        for k in 1..=3 {
            let config = ModelConfig {
                aggregator,
                history,
                ..small_config(5, 4, k, 3)
            };
            let params = random_params(&config, 17 + k as u64);
            for (post, _) in fx.targets() {
                let got = forward(post, &fx.inputs(), &params, &config).unwrap();
                let expect = ref_forward(&fx, post, &params, &config);
                for c in 0..4 {
                    assert!(
                        (got.probs[c] - expect[c]).abs() < 1e-10,
                        "{aggregator} {history} k={k} {}: {:?} vs {:?}",
                        post.id,
                        got.probs,
                        expect
                    );
                }
            }
        }
    }
}

#[test]
fn text_only_forward_matches_reference() {
    let fx = fixture(5, 2, 6, 2, 4);
    let config = ModelConfig::text_only(6);
    let params = random_params(&config, 5);
    for (post, _) in fx.targets() {
        let got = forward(post, &fx.inputs(), &params, &config).unwrap();
        let expect = ref_forward(&fx, post, &params, &config);
        for c in 0..4 {
            assert!((got.probs[c] - expect[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn loss_examples() {
    let fx = fixture(6, 2, 4, 3, 5);
    let config = small_config(4, 3, 2, 3);
    let targets = fx.targets();

    let zeros = ModelParams::zeros(&config);
    let l = loss(&targets[..2], &fx.inputs(), &zeros, &config).unwrap();
    assert!((l - 4f64.ln()).abs() < 1e-12);

    // three samples with known probabilities
    let params = random_params(&config, 8);
    let batch = &targets[..3];
    let l = loss(batch, &fx.inputs(), &params, &config).unwrap();
    let expect: f64 = batch
        .iter()
        .map(|(p, g)| -ref_forward(&fx, p, &params, &config)[g.index()].ln())
        .sum::<f64>()
        / 3.0;
    assert!((l - expect).abs() < 1e-10);

    // a saturated, correct prediction costs nothing and has no gradient
    let mut sure = ModelParams::zeros(&config);
    sure.head_bias = vec![1000.0, 0.0, 0.0, 0.0];
    let po: Vec<(&Post, StanceLabel)> = batch.iter().map(|(p, _)| (*p, StanceLabel::PO)).collect();
    assert_eq!(loss(&po, &fx.inputs(), &sure, &config).unwrap(), 0.0);
    let g = gradients(&po, &fx.inputs(), &sure, &config).unwrap();
    assert!(g.tensors().iter().all(|t| t.2.iter().all(|x| x.abs() < 1e-12)));

    // and a saturated wrong prediction is clamped rather than infinite
    let ng: Vec<(&Post, StanceLabel)> = batch.iter().map(|(p, _)| (*p, StanceLabel::NG)).collect();
    let l = loss(&ng, &fx.inputs(), &sure, &config).unwrap();
    assert!((l + 1e-12f64.ln()).abs() < 1e-9);

    assert!(loss(&[], &fx.inputs(), &params, &config).is_err());
}

fn finite_difference_check(config: &ModelConfig, base: u64) {
    let failures = finite_difference_failures(config, base);
    assert!(
        failures.is_empty(),
        "{} {}: {}",
        config.aggregator,
        config.history,
        failures.join(", ")
    );
}

#[test]
fn gradients_match_finite_differences() {
    for (i, (aggregator, history)) in VARIANTS.into_iter().enumerate() {
        let config = ModelConfig {
            aggregator,
            history,
            ..small_config(8, 8, 2, 3)
        };
        finite_difference_check(&config, 1000 * i as u64);
    }
    finite_difference_check(&ModelConfig::text_only(8), 0);
}

#[test]
fn duplicating_the_batch_keeps_the_gradient() {
    let fx = fixture(8, 3, 4, 3, 9);
    let config = small_config(4, 3, 2, 3);
    let params = random_params(&config, 9);
    let targets = fx.targets();
    let once = gradients(&targets[..1], &fx.inputs(), &params, &config).unwrap();
    let twice = gradients(&[targets[0], targets[0]], &fx.inputs(), &params, &config).unwrap();
    for (a, b) in once.tensors().iter().zip(twice.tensors()) {
        for (x, y) in a.2.iter().zip(b.2) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }
}

fn scalar_params(value: f64) -> (ModelConfig, ModelParams) {
    // text-only, d=1: head weight 1×4 plus 4 biases plus α
    let config = ModelConfig {
        lambda: 1,
        ..ModelConfig::text_only(1)
    };
    let mut p = ModelParams::zeros(&config);
    p.alpha[0] = value;
    (config, p)
}

#[test]
fn adam_first_step_closed_form() {
    let (config, mut params) = scalar_params(0.0);
    let mut grads = ModelParams::zeros(&config);
    grads.alpha[0] = 1.0;
    let mut state = OptimizerState::new(&params);
    adam_step(&mut params, &grads, &mut state, 0.1, 0.0).unwrap();
    assert!((params.alpha[0] - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    assert_eq!(state.t, 1);
}

#[test]
fn adam_zero_gradient_is_identity() {
    let config = small_config(4, 3, 2, 3);
    let mut params = random_params(&config, 3);
    let before = params.clone();
    let grads = ModelParams::zeros(&config);
    let mut state = OptimizerState::new(&params);
    for _ in 0..3 {
        adam_step(&mut params, &grads, &mut state, 0.01, 0.0).unwrap();
    }
    assert_eq!(params, before);
}

#[test]
fn adam_matches_scalar_oracle_on_quadratic() {
    // minimise (x - 3)^2 from x = 0 with decoupled decay
    let (lr, wd) = (0.05, 0.01);
    let (config, mut params) = scalar_params(0.0);
    let mut state = OptimizerState::new(&params);

    let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
    for t in 1..=3 {
        let mut grads = ModelParams::zeros(&config);
        grads.alpha[0] = 2.0 * (params.alpha[0] - 3.0);
        adam_step(&mut params, &grads, &mut state, lr, wd).unwrap();

        let g = 2.0 * (x - 3.0);
        x -= lr * wd * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let m_hat = m / (1.0 - 0.9f64.powi(t));
        let v_hat = v / (1.0 - 0.999f64.powi(t));
        x -= lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((params.alpha[0] - x).abs() < 1e-12, "step {t}");
    }
}

#[test]
fn one_small_step_does_not_increase_loss() {
    let fx = fixture(4, 1, 4, 3, 12);
    let config = small_config(4, 4, 2, 3);
    let data = Dataset::labelled(
        &fx.targets().iter().map(|t| t.0).collect::<Vec<_>>(),
        &fx.inputs(),
        &config,
    )
    .unwrap();
    assert_eq!(data.len(), 4);
    let all: Vec<usize> = (0..4).collect();
    let mut params = ModelParams::init(&config, 12);
    let mut state = OptimizerState::new(&params);
    let (before, grads) = data.gradients(&params, &all).unwrap();
    adam_step(&mut params, &grads, &mut state, 1e-5, 5e-4).unwrap();
    let after = data.loss(&params, &all).unwrap();
    assert!(after <= before, "{after} > {before}");
}

#[test]
fn fifty_full_batch_steps_halve_the_loss() {
    let fx = fixture(20, 10, 8, 3, 21);
    let config = small_config(8, 8, 2, 3);
    let posts: Vec<&Post> = fx.targets().iter().map(|t| t.0).collect();
    let data = Dataset::labelled(&posts, &fx.inputs(), &config).unwrap();
    assert_eq!(data.len(), 20);
    let all: Vec<usize> = (0..20).collect();
    let mut params = ModelParams::init(&config, 21);
    let mut state = OptimizerState::new(&params);
    let initial = data.loss(&params, &all).unwrap();
    for _ in 0..50 {
        let (_, grads) = data.gradients(&params, &all).unwrap();
        adam_step(&mut params, &grads, &mut state, 1e-2, 5e-4).unwrap();
    }
    let last = data.loss(&params, &all).unwrap();
    assert!(last <= 0.5 * initial, "{initial} -> {last}");
}

fn quick_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        model: small_config(6, 6, 2, 3),
        epochs: 5,
        learning_rate: 1e-2,
        seed,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let fx = fixture(30, 15, 6, 3, 31);
    let config = quick_train_config(31);
    let posts: Vec<&Post> = fx.corpus.posts().iter().collect();
    let data = Dataset::labelled(&posts, &fx.inputs(), &config.model).unwrap();
    let a = train_dataset(&data, &config).unwrap();
    let b = train_dataset(&data, &config).unwrap();
    assert_eq!(a.log.len(), 5);
    let bits = |log: &[stance_core::model::EpochRecord]| -> Vec<(usize, u64, u64)> {
        log.iter()
            .map(|r| (r.epoch, r.train_loss.to_bits(), r.val_accuracy.to_bits()))
            .collect()
    };
    assert_eq!(bits(&a.log), bits(&b.log));
    assert_eq!(a.params, b.params);
    assert_eq!(a.best_epoch, b.best_epoch);

    // the selected epoch has the best validation accuracy, earliest on ties
    let best = a.log.iter().map(|r| r.val_accuracy).fold(f64::MIN, f64::max);
    let first = a.log.iter().find(|r| r.val_accuracy == best).unwrap();
    assert_eq!(first.epoch, a.best_epoch);

    // a fixture post classifies the same way under the same seed
    let (post, _) = fx.targets()[0];
    let l1 = stance_core::model::classify(post, &fx.inputs(), &a.params, &config.model).unwrap();
    let l2 = stance_core::model::classify(post, &fx.inputs(), &b.params, &config.model).unwrap();
    assert_eq!(l1, l2);
}

#[test]
fn divergence_reports_the_epoch() {
    let fx = fixture(30, 15, 6, 3, 32);
    let mut config = quick_train_config(32);
    config.learning_rate = 1e300;
    let posts: Vec<&Post> = fx.corpus.posts().iter().collect();
    let data = Dataset::labelled(&posts, &fx.inputs(), &config.model).unwrap();
    match train_dataset(&data, &config) {
        Err(Error::Diverged { epoch }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn probabilities_form_a_distribution(seed in 0u64..1000, k in 1usize..=3, lambda in 1usize..=4, gcn: bool, mean: bool) {
        let fx = fixture(7, 4, 5, 3, seed);
        let config = ModelConfig {
            aggregator: if gcn { AggregatorKind::Gcn } else { AggregatorKind::Gat },
            history: if mean { HistoryKind::Mean } else { HistoryKind::PositionEncoding },
            ..small_config(5, 4, k, lambda)
        };
        let params = random_params(&config, seed);
        for (post, _) in fx.targets() {
            let p = forward(post, &fx.inputs(), &params, &config).unwrap();
            prop_assert!(p.probs.iter().all(|&x| x >= 0.0));
            prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive(n in 10usize..500, seed: u64) {
        let s = stance_core::model::split_dataset(n, &[0.8, 0.1, 0.1], seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
