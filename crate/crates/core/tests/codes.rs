mod common;

use std::collections::HashSet;

use ald::codebook::{
    ablation_select, build_ald_codes, build_atomic_codes, build_caption_codes, build_frequency_table, AldOptions,
    CodeBook, EntityRecord, TokenOrder, TokenSelection,
};
use ald::hkc::build_hkc_codes;
use ald::tokenizer::{TokenValue, Vocabulary};
use common::{count_tokens, random_corpus, random_embeddings};
use proptest::prelude::*;

fn assert_unique(book: &CodeBook) {
    let mut seen = HashSet::new();
    for e in book.entries() {
        assert!(seen.insert(e.code.values.clone()), "duplicate code for {}", e.entity_id);
    }
}

/// Deduplicated tokens sorted by (count, value).
fn rarest_first(seq: &[TokenValue], counts: &[u64]) -> Vec<TokenValue> {
    let mut unique: Vec<TokenValue> = Vec::new();
    for &v in seq {
        if !unique.contains(&v) {
            unique.push(v);
        }
    }
    unique.sort_by_key(|&v| (counts[v as usize], v));
    unique
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_scheme_is_unique_and_reproducible(seed in any::<u64>(), n in 10usize..=5000, l in 2usize..=4) {
        let c = random_corpus(seed, n);
        let v = c.vocab.size() as u32;
        let emb = random_embeddings(seed, n, 8);
        let build = || -> Vec<CodeBook> {
            vec![
                build_ald_codes(&c.vocab, &c.entities, l, seed).unwrap(),
                build_atomic_codes(&c.entities, l, v, seed).unwrap(),
                build_caption_codes(&c.vocab, &c.entities, None, seed).unwrap(),
                build_caption_codes(&c.vocab, &c.entities, Some(l), seed).unwrap(),
                build_hkc_codes(&emb, 8, 3, seed).unwrap(),
            ]
        };
        let (first, second) = (build(), build());
        for (a, b) in first.iter().zip(&second) {
            prop_assert_eq!(a.len(), n);
            assert_unique(a);
            prop_assert_eq!(a.to_tsv(), b.to_tsv());
        }
    }

    #[test]
    fn ald_leading_tokens_match_sorted_oracle(seed in any::<u64>(), n in 10usize..=2000, l in 2usize..=5) {
        let c = random_corpus(seed, n);
        let counts = count_tokens(&c.tokens, c.vocab.size());
        let book = build_ald_codes(&c.vocab, &c.entities, l, seed).unwrap();
        for (entry, seq) in book.entries().iter().zip(&c.tokens) {
            let oracle = rarest_first(seq, &counts);
            let lead = (l - 1).min(oracle.len());
            prop_assert_eq!(&entry.code.values[..lead], &oracle[..lead], "{}", entry.entity_id);
            prop_assert_eq!(entry.code.len(), l);
            let short = oracle.len() < l - 1;
            if short {
                prop_assert!(entry.code.flags.used_random_fallback);
            } else if !entry.code.flags.used_random_fallback {
                // The last position is the k-th remaining rare token.
                let k = entry.code.flags.disambiguation_steps as usize;
                prop_assert_eq!(entry.code.values[l - 1], oracle[l - 1 + k]);
            }
            prop_assert!(entry.code.values.iter().all(|&x| x >= 1 && x <= c.vocab.size() as u32));
        }
    }

    #[test]
    fn frequency_table_matches_direct_count(seed in any::<u64>(), n in 1usize..=500) {
        let c = random_corpus(seed, n);
        let counts = count_tokens(&c.tokens, c.vocab.size());
        let table = build_frequency_table(&c.vocab, &c.entities).unwrap();
        for v in 1..=c.vocab.size() as u32 {
            prop_assert_eq!(table.count(v), counts[v as usize]);
        }
        prop_assert_eq!(table.total(), counts.iter().sum::<u64>());
    }

    #[test]
    fn ablation_strategies_stay_unique(seed in any::<u64>(), n in 10usize..=1500, sel in 0usize..4, ord in 0usize..4) {
        let c = random_corpus(seed, n);
        let selection = [TokenSelection::LeastFrequent, TokenSelection::MostFrequent, TokenSelection::First, TokenSelection::Random][sel];
        let order = [TokenOrder::LeastFirst, TokenOrder::Syntax, TokenOrder::Random, TokenOrder::LeastLast][ord];
        let opts = AldOptions::new(3, seed).with_strategy(selection, order);
        let a = ablation_select(&c.vocab, &c.entities, opts).unwrap();
        let b = ablation_select(&c.vocab, &c.entities, opts).unwrap();
        assert_unique(&a);
        prop_assert_eq!(a.to_tsv(), b.to_tsv());
    }

    #[test]
    fn caption_codes_end_with_eoc(seed in any::<u64>(), n in 10usize..=500, t in 2usize..=4) {
        let c = random_corpus(seed, n);
        let eoc = c.vocab.size() as u32 + 1;
        let book = build_caption_codes(&c.vocab, &c.entities, Some(t), seed).unwrap();
        prop_assert_eq!(book.end_of_code(), Some(eoc));
        for (entry, seq) in book.entries().iter().zip(&c.tokens) {
            let body = &entry.code.values[..entry.code.len() - 1];
            prop_assert_eq!(*entry.code.values.last().unwrap(), eoc);
            prop_assert_eq!(body.len(), t.min(seq.len()));
            if !entry.code.flags.used_random_fallback && entry.code.flags.disambiguation_steps == 0 {
                prop_assert_eq!(body, &seq[..body.len()]);
            }
        }
    }
}

#[test]
fn ald_prefix_follows_rarity_on_hand_corpus() {
    let vocab = Vocabulary::from_tokens(["[UNK]", "a", "b", "c", "d"]).unwrap();
    let entities = vec![
        EntityRecord::new("x", "a b c"),
        EntityRecord::new("y", "a b d"),
        EntityRecord::new("z", "a a b"),
    ];
    // Counts: a 4, b 3, c 1, d 1.
    let book = build_ald_codes(&vocab, &entities, 3, 0).unwrap();
    assert_eq!(book.code_of("x").unwrap().values, vec![4, 3, 2]);
    assert_eq!(book.code_of("y").unwrap().values, vec![5, 3, 2]);
    assert_eq!(book.code_of("z").unwrap().values[..2], [3, 2]);
    assert!(book.code_of("z").unwrap().flags.used_random_fallback);
}
