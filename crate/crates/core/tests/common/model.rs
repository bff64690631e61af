use ald::seed;
use ald::tinyger::decode::rank_order;
use ald::tinyger::{Hypothesis, ModelConfig, Params, TinyGerModel, TrainingExample};
use rand::Rng;

pub fn config(vocab: u32, d: usize, heads: usize, layers: usize, nq: usize, max_len: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        d_model: d,
        n_layers: layers,
        n_heads: heads,
        d_ff: 2 * d,
        d_query: 3,
        n_query: nq,
        max_code_len: max_len,
        seed,
    }
}

pub fn random_example(cfg: &ModelConfig, len: usize, seed: u64) -> TrainingExample {
    let mut rng = seed::rng(seed, "test/example");
    TrainingExample {
        query: (0..cfg.n_query * cfg.d_query).map(|_| rng.random_range(-1.0..1.0)).collect(),
        target: (0..len).map(|_| rng.random_range(1..=cfg.vocab_size + 1)).collect(),
    }
}

pub fn flat(p: &Params) -> Vec<f64> {
    p.tensors().into_iter().flat_map(|(_, t)| t.to_vec()).collect()
}

pub fn set_flat(p: &mut Params, i: usize, value: f64) {
    let mut offset = 0;
    for t in p.tensors_mut() {
        if i < offset + t.len() {
            t[i - offset] = value;
            return;
        }
        offset += t.len();
    }
    panic!("index out of range");
}

/// Returns the worst relative error and the tensor holding it.
pub fn gradient_check(model: &TinyGerModel, ex: &TrainingExample, smoothing: f64) -> (f64, String) {
    let (_, grads) = model.loss_and_gradient(ex, smoothing).unwrap();
    let analytic = flat(&grads);
    let base = flat(&model.params);
    let names: Vec<(String, usize)> = model.params.tensors().into_iter().map(|(n, t)| (n, t.len())).collect();
    let h = 1e-5;
    let mut probe = model.clone();
    let mut worst = (0.0, String::new());
    for (i, &a) in analytic.iter().enumerate() {
        set_flat(&mut probe.params, i, base[i] + h);
        let up = probe.forward_loss(ex, smoothing).unwrap().loss;
        set_flat(&mut probe.params, i, base[i] - h);
        let down = probe.forward_loss(ex, smoothing).unwrap().loss;
        set_flat(&mut probe.params, i, base[i]);
        let fd = (up - down) / (2.0 * h);
        let rel = (a - fd).abs() / (fd.abs() + 1e-8);
        if rel > worst.0 {
            let mut off = 0;
            let mut name = String::new();
            for (n, len) in &names {
                if i < off + len {
                    name = format!("{n}[{}] a={a:e} fd={fd:e}", i - off);
                    break;
                }
                off += len;
            }
            worst = (rel, name);
        }
    }
    worst
}

pub fn brute_force_best(model: &TinyGerModel, query: &[f64]) -> Hypothesis {
    let k = model.alphabet() as u32;
    let mut all = Vec::new();
    for a in 0..k {
        for b in 0..k {
            let ex = TrainingExample {
                query: query.to_vec(),
                target: vec![a, b],
            };
            // Loss at smoothing 0 is the mean negative log-likelihood.
            let nll = model.forward_loss(&ex, 0.0).unwrap().loss * 2.0;
            all.push(Hypothesis {
                code: vec![a, b],
                log_prob: -nll,
            });
        }
    }
    assert_eq!(all.len(), 49);
    all.sort_by(rank_order);
    all.swap_remove(0)
}

