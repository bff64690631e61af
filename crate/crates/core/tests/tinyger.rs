mod common;

use ald::codetrie::CodeTrie;
use ald::seed;
use ald::tinyger::decode::{beam_decode_with_stats, rank_order};
use ald::tinyger::{
    beam_decode, checkpoint, greedy_decode, train, DecodeOptions, ModelConfig, TinyGerModel, TrainConfig,
    TrainingExample,
};
use common::model::{brute_force_best, config, gradient_check, random_example};
use rand::Rng;

#[test]
fn gradients_match_finite_differences() {
    let cases = [
        (config(5, 4, 2, 1, 1, 3, 11), 3, 0.0),
        (config(4, 6, 3, 2, 2, 4, 12), 4, 0.1),
        (config(7, 4, 1, 1, 1, 2, 13), 2, 0.3),
    ];
    for (i, (cfg, len, smoothing)) in cases.into_iter().enumerate() {
        let model = TinyGerModel::new(cfg).unwrap();
        let ex = random_example(&cfg, len, i as u64);
        let (worst, at) = gradient_check(&model, &ex, smoothing);
        assert!(worst < 1e-4, "config {i}: relative error {worst} at {at}");
    }
}

#[test]
fn hand_computed_single_token_loss() {
    let mut model = TinyGerModel::new(config(1, 2, 1, 1, 1, 1, 0)).unwrap();
    model.params.lnf_gain = vec![0.0, 0.0];
    model.params.lnf_bias = vec![1.0, -1.0];
    model.params.w_out = vec![1.0, 0.0, 2.0, 0.0, 1.0, -1.0];
    model.params.b_out = vec![0.0; 3];
    let ex = TrainingExample {
        query: vec![0.2, 0.1, -0.4],
        target: vec![2],
    };
    // logits (1, -1, 3): ln(e + 1/e + e^3) - 3
    let out = model.forward_loss(&ex, 0.0).unwrap();
    assert_eq!(out.logits, vec![1.0, -1.0, 3.0]);
    assert!((out.loss - 0.142_931_628_499_899_68).abs() < 1e-12);
    // smoothing 0.3: lse - 0.7 * 3 - 0.3 * mean(1, -1, 3)
    let smoothed = model.forward_loss(&ex, 0.3).unwrap();
    assert!((smoothed.loss - 0.742_931_628_499_900_1).abs() < 1e-12);
}

#[test]
fn output_rows_are_distributions() {
    let cfg = config(6, 8, 2, 1, 1, 3, 5);
    let model = TinyGerModel::new(cfg).unwrap();
    let ex = random_example(&cfg, 3, 9);
    let out = model.forward_loss(&ex, 0.0).unwrap();
    for row in out.logits.chunks(model.alphabet()) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let total: f64 = row.iter().map(|x| (x - max).exp() / z).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}

#[test]
fn incremental_logits_match_teacher_forcing() {
    let cfg = config(6, 8, 2, 2, 2, 4, 21);
    let model = TinyGerModel::new(cfg).unwrap();
    let ex = random_example(&cfg, 4, 3);
    let full = model.forward_loss(&ex, 0.0).unwrap().logits;
    let k = model.alphabet();
    let (mut state, mut logits) = model.start_decoding(&ex.query).unwrap();
    for i in 0..4 {
        for (a, b) in logits.iter().zip(&full[i * k..(i + 1) * k]) {
            assert!((a - b).abs() < 1e-10);
        }
        if i < 3 {
            logits = model.step(&mut state, ex.target[i]).unwrap();
        }
    }
}

#[test]
fn exhaustive_beam_equals_brute_force() {
    for s in 0..10 {
        let cfg = config(5, 8, 2, 1, 1, 2, 100 + s);
        let model = TinyGerModel::new(cfg).unwrap();
        let query = random_example(&cfg, 1, s).query;
        let best = brute_force_best(&model, &query);
        let beam = beam_decode(&model, &query, DecodeOptions::new(2).with_beam(7), None).unwrap();
        assert_eq!(beam[0].code, best.code);
        assert!((beam[0].log_prob - best.log_prob).abs() < 1e-9);
    }
}

#[test]
fn beam_one_is_greedy() {
    for s in 0..10 {
        let cfg = config(9, 8, 2, 1, 1, 4, 200 + s);
        let model = TinyGerModel::new(cfg).unwrap();
        let query = random_example(&cfg, 1, s).query;
        let greedy = greedy_decode(&model, &query, 4, None).unwrap();
        let beam = beam_decode(&model, &query, DecodeOptions::new(4).with_beam(1), None).unwrap();
        assert_eq!(beam.len(), 1);
        assert_eq!(beam[0].code, greedy.code);
        assert!((beam[0].log_prob - greedy.log_prob).abs() < 1e-12);
    }
}

#[test]
fn beam_results_are_ranked() {
    let cfg = config(9, 8, 2, 1, 1, 3, 7);
    let model = TinyGerModel::new(cfg).unwrap();
    let query = random_example(&cfg, 1, 1).query;
    let beam = beam_decode(&model, &query, DecodeOptions::new(3).with_beam(5), None).unwrap();
    assert_eq!(beam.len(), 5);
    for w in beam.windows(2) {
        assert!(rank_order(&w[0], &w[1]).is_le());
    }
}

#[test]
fn single_code_trie_forces_that_code() {
    let cfg = config(9, 8, 2, 1, 1, 3, 8);
    let model = TinyGerModel::new(cfg).unwrap();
    let trie = CodeTrie::from_codes([("only", &[4u32, 9, 2][..])], 11).unwrap();
    for s in 0..5 {
        let query = random_example(&cfg, 1, s).query;
        let beam = beam_decode(&model, &query, DecodeOptions::new(3).with_beam(3), Some(&trie)).unwrap();
        assert_eq!(beam.len(), 1);
        assert_eq!(beam[0].code, vec![4, 9, 2]);
    }
}

#[test]
fn caption_decoding_stops_at_end_of_code() {
    let cfg = config(4, 8, 2, 1, 1, 5, 8);
    let model = TinyGerModel::new(cfg).unwrap();
    let trie = CodeTrie::from_codes([("a", &[1u32, 5][..]), ("b", &[2u32, 3, 4, 5][..])], 6).unwrap();
    let query = random_example(&cfg, 1, 0).query;
    let opts = DecodeOptions::new(5).with_beam(4).with_end_of_code(Some(5));
    let beam = beam_decode(&model, &query, opts, Some(&trie)).unwrap();
    let mut codes: Vec<_> = beam.iter().map(|h| h.code.clone()).collect();
    codes.sort();
    assert_eq!(codes, vec![vec![1, 5], vec![2, 3, 4, 5]]);
}

#[test]
fn attention_work_is_quadratic_in_code_length() {
    let ops = |len: usize| {
        let cfg = config(5, 8, 2, 1, 1, len, 0);
        let model = TinyGerModel::new(cfg).unwrap();
        let q = random_example(&cfg, 1, 0).query;
        beam_decode_with_stats(&model, &q, DecodeOptions::new(len).with_beam(1), None)
            .unwrap()
            .score_ops
    };
    // One query row, then len code rows; row p sees p + 1 rows, for each of two heads.
    for len in [2usize, 4, 8, 16] {
        let expected = 2 * (0..=len).map(|p| p + 1).sum::<usize>();
        assert_eq!(ops(len), expected as u64);
    }
    let ratio = ops(32) as f64 / ops(16) as f64;
    assert!(ratio > 3.5 && ratio < 4.5);
}

fn memorization_data(n: usize, seed_: u64) -> Vec<TrainingExample> {
    let mut rng = seed::rng(seed_, "test/memo");
    (0..n)
        .map(|i| TrainingExample {
            query: (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
            target: vec![(i % 12) as u32 + 1, (i / 12) as u32 + 1],
        })
        .collect()
}

#[test]
fn memorizes_fifty_entities() {
    let data = memorization_data(50, 0);
    let mut cfg_m = ModelConfig::new(12, 32, 8, 2, 0);
    cfg_m.d_ff = 64;
    let mut model = TinyGerModel::new(cfg_m).unwrap();
    let cfg = TrainConfig {
        steps: 2000,
        batch_size: 16,
        lr: 0.05,
        label_smoothing: 0.0,
        ..TrainConfig::default()
    };
    let initial = train::dataset_loss(&model, &data, 0.0).unwrap();
    let report = train(&mut model, &data, &cfg).unwrap();
    let fin = train::dataset_loss(&model, &data, 0.0).unwrap();
    assert_eq!(report.steps_completed, 2000);
    assert!(fin < 0.1 * initial, "initial {initial} final {fin}");
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = memorization_data(10, 1);
    let mut model = TinyGerModel::new(ModelConfig::new(12, 8, 8, 2, 1)).unwrap();
    let before = model.params.clone();
    let cfg = TrainConfig {
        steps: 5,
        batch_size: 4,
        lr: 0.0,
        ..TrainConfig::default()
    };
    train(&mut model, &data, &cfg).unwrap();
    assert_eq!(model.params, before);
}

#[test]
fn training_is_deterministic() {
    let data = memorization_data(20, 2);
    let run = || {
        let mut model = TinyGerModel::new(ModelConfig::new(12, 8, 8, 2, 4)).unwrap();
        let cfg = TrainConfig {
            steps: 30,
            batch_size: 20,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &data, &cfg).unwrap();
        (report.loss_curve, checkpoint::to_bytes(&model))
    };
    assert_eq!(run(), run());
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let data = memorization_data(10, 3);
    let mut model = TinyGerModel::new(ModelConfig::new(12, 8, 8, 2, 5)).unwrap();
    let cfg = TrainConfig {
        steps: 400,
        batch_size: 4,
        lr: 1e6,
        clip_norm: None,
        ..TrainConfig::default()
    };
    match train(&mut model, &data, &cfg) {
        Err(ald::Error::Divergence { .. }) | Err(ald::Error::NonFinite(_)) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip() {
    let model = TinyGerModel::new(config(6, 8, 2, 2, 2, 3, u64::MAX - 3)).unwrap();
    let bytes = checkpoint::to_bytes(&model);
    assert_eq!(&bytes[..4], b"TGER");
    assert_eq!(bytes.len(), 4 + 11 * 4 + model.params.len() * 8);
    let back = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.params, model.params);
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tger");
    checkpoint::save(&model, &path).unwrap();
    assert_eq!(checkpoint::load(&path).unwrap().params, model.params);
}
