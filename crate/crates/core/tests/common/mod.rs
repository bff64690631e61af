#![allow(dead_code)]

use ald::codebook::EntityRecord;
pub mod data;
pub mod hier;
pub mod model;

use ald::embedding::EmbeddingMatrix;
use ald::seed;
use ald::tokenizer::{TokenValue, Vocabulary};
use rand::Rng;

/// A corpus whose token values are known without running the tokenizer.
pub struct Corpus {
    pub vocab: Vocabulary,
    pub entities: Vec<EntityRecord>,
    /// Expected token values per entity, in name order.
    pub tokens: Vec<Vec<TokenValue>>,
}

/// `n` names over a vocabulary of `t{i}` words and `##s{j}` suffixes.
/// Word choice is skewed so token frequencies vary widely.
pub fn random_corpus(seed: u64, n: usize) -> Corpus {
    let mut rng = seed::rng(seed, "test/corpus");
    let n_words = rng.random_range((n / 4).max(40)..=(n / 2).max(80));
    let n_suffix = rng.random_range(0..=10usize);
    let mut tokens = vec!["[UNK]".to_string()];
    tokens.extend((0..n_words).map(|i| format!("t{i}")));
    tokens.extend((0..n_suffix).map(|j| format!("##s{j}")));
    let vocab = Vocabulary::from_tokens(tokens).unwrap();
    let word_value = |i: usize| i as TokenValue + 2;
    let suffix_value = |j: usize| (n_words + 2 + j) as TokenValue;

    let mut entities = Vec::with_capacity(n);
    let mut expected = Vec::with_capacity(n);
    for e in 0..n {
        let n_name_words = rng.random_range(1..=5);
        let mut words = Vec::new();
        let mut values = Vec::new();
        for _ in 0..n_name_words {
            let u: f64 = rng.random();
            let i = ((n_words as f64) * u.powf(1.5)) as usize;
            let i = i.min(n_words - 1);
            let mut word = format!("t{i}");
            values.push(word_value(i));
            if n_suffix > 0 && rng.random_bool(0.3) {
                let j = rng.random_range(0..n_suffix);
                word.push_str(&format!("s{j}"));
                values.push(suffix_value(j));
            }
            words.push(word);
        }
        entities.push(EntityRecord::new(format!("e{e:05}"), words.join(" ")));
        expected.push(values);
    }
    Corpus {
        vocab,
        entities,
        tokens: expected,
    }
}

/// Independent occurrence counts, repeats included.
pub fn count_tokens(tokens: &[Vec<TokenValue>], vocab_size: usize) -> Vec<u64> {
    let mut counts = vec![0u64; vocab_size + 1];
    for seq in tokens {
        for &v in seq {
            counts[v as usize] += 1;
        }
    }
    counts
}

/// Standard-normal rows with ids `e00000`, `e00001`, ...
pub fn random_embeddings(seed: u64, n: usize, dim: usize) -> EmbeddingMatrix {
    let mut rng = seed::rng(seed, "test/embeddings");
    let ids = (0..n).map(|e| format!("e{e:05}")).collect();
    let data = (0..n * dim)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) as f32)
        .collect();
    EmbeddingMatrix::new(ids, dim, data).unwrap()
}
