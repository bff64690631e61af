//! Top-1 scoring on seen and unseen splits.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codetrie::CodeTrie;
use crate::error::{Error, Result};
use crate::tinyger::decode::{beam_decode, DecodeOptions};
use crate::tinyger::{Split, TinyGerModel};
use crate::tokenizer::TokenValue;

/// `2su / (s + u)`, or 0 when both are 0.
pub fn harmonic_mean(seen: f64, unseen: f64) -> f64 {
    if seen + unseen <= 0.0 {
        0.0
    } else {
        2.0 * seen * unseen / (seen + unseen)
    }
}

/// Anything that maps a query vector to its best code.
pub trait CodeDecoder: Sync {
    fn decode(&self, query: &[f64]) -> Result<Vec<TokenValue>>;
}

/// Beam search over a trained model; `trie` set means constrained decoding.
pub struct ModelDecoder<'a> {
    pub model: &'a TinyGerModel,
    pub options: DecodeOptions,
    pub trie: Option<&'a CodeTrie>,
}

impl CodeDecoder for ModelDecoder<'_> {
    fn decode(&self, query: &[f64]) -> Result<Vec<TokenValue>> {
        let hyps = beam_decode(self.model, query, self.options, self.trie)?;
        Ok(hyps.into_iter().next().map(|h| h.code).unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalQuery {
    pub entity_id: String,
    pub query: Vec<f64>,
    pub split: Split,
    /// Token length of the gold entity name.
    pub name_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub index: usize,
    pub split: Split,
    pub gold: String,
    pub predicted_code: Vec<TokenValue>,
    pub predicted_entity: Option<String>,
    pub name_len: usize,
    pub valid: bool,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub gold: String,
    pub predicted_code: Vec<TokenValue>,
    pub predicted_entity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent.
    pub seen_top1: f64,
    /// Percent.
    pub unseen_top1: f64,
    /// Percent.
    pub hm: f64,
    /// Percent over both splits.
    pub overall_top1: f64,
    /// Fraction of top-1 codes present in the codebook.
    pub valid_code_rate: f64,
    pub valid_code_rate_seen: f64,
    pub valid_code_rate_unseen: f64,
    pub n_seen: usize,
    pub n_unseen: usize,
    /// Gold name length to percent accuracy over both splits.
    pub per_length_accuracy: BTreeMap<usize, f64>,
    pub per_length_count: BTreeMap<usize, usize>,
    /// First wrong prediction per gold entity, at most [`MAX_CONFUSIONS`].
    pub confusions: Vec<Confusion>,
}

pub const MAX_CONFUSIONS: usize = 100;

fn percent(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * hits as f64 / n as f64
    }
}

/// Decodes every query and scores it against `trie`. A top-1 code that is
/// not in the trie counts as wrong. The seen and unseen splits must both be
/// non-empty; training queries are ignored.
pub fn evaluate(decoder: &dyn CodeDecoder, queries: &[EvalQuery], trie: &CodeTrie) -> Result<(EvalReport, Vec<QueryResult>)> {
    let scored: Vec<&EvalQuery> = queries.iter().filter(|q| q.split != Split::Train).collect();
    for split in [Split::Seen, Split::Unseen] {
        if !scored.iter().any(|q| q.split == split) {
            return Err(Error::EmptySplit(split.as_str().into()));
        }
    }
    let results: Vec<Result<QueryResult>> = scored
        .par_iter()
        .enumerate()
        .map(|(index, q)| {
            let code = decoder.decode(&q.query)?;
            let resolved = trie.resolve(&code).map(str::to_string);
            Ok(QueryResult {
                index,
                split: q.split,
                gold: q.entity_id.clone(),
                correct: resolved.as_deref() == Some(q.entity_id.as_str()),
                valid: resolved.is_some(),
                predicted_entity: resolved,
                predicted_code: code,
                name_len: q.name_len,
            })
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((summarize(&results), results))
}

pub fn summarize(results: &[QueryResult]) -> EvalReport {
    let count = |split: Split, pred: fn(&QueryResult) -> bool| {
        let of_split = results.iter().filter(|r| r.split == split);
        (of_split.clone().filter(|r| pred(r)).count(), of_split.count())
    };
    let (seen_hits, n_seen) = count(Split::Seen, |r| r.correct);
    let (unseen_hits, n_unseen) = count(Split::Unseen, |r| r.correct);
    let (seen_valid, _) = count(Split::Seen, |r| r.valid);
    let (unseen_valid, _) = count(Split::Unseen, |r| r.valid);
    let seen_top1 = percent(seen_hits, n_seen);
    let unseen_top1 = percent(unseen_hits, n_unseen);

    let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in results {
        let b = buckets.entry(r.name_len).or_default();
        b.0 += r.correct as usize;
        b.1 += 1;
    }
    let mut confusions = Vec::new();
    let mut reported = std::collections::HashSet::new();
    for r in results.iter().filter(|r| !r.correct) {
        if confusions.len() == MAX_CONFUSIONS {
            break;
        }
        if reported.insert(r.gold.as_str()) {
            confusions.push(Confusion {
                gold: r.gold.clone(),
                predicted_code: r.predicted_code.clone(),
                predicted_entity: r.predicted_entity.clone(),
            });
        }
    }
    let n = results.len();
    EvalReport {
        seen_top1,
        unseen_top1,
        hm: harmonic_mean(seen_top1, unseen_top1),
        overall_top1: percent(seen_hits + unseen_hits, n),
        valid_code_rate: if n == 0 { 0.0 } else { (seen_valid + unseen_valid) as f64 / n as f64 },
        valid_code_rate_seen: if n_seen == 0 { 0.0 } else { seen_valid as f64 / n_seen as f64 },
        valid_code_rate_unseen: if n_unseen == 0 { 0.0 } else { unseen_valid as f64 / n_unseen as f64 },
        n_seen,
        n_unseen,
        per_length_accuracy: buckets.iter().map(|(&l, &(h, c))| (l, percent(h, c))).collect(),
        per_length_count: buckets.iter().map(|(&l, &(_, c))| (l, c)).collect(),
        confusions,
    }
}

/// One line per scored query: index, split, gold, code, predicted entity, valid, correct.
pub fn results_to_tsv(results: &[QueryResult]) -> String {
    let mut out = String::from("index\tsplit\tgold\tpredicted_code\tpredicted_entity\tvalid\tcorrect\n");
    for r in results {
        let code: Vec<String> = r.predicted_code.iter().map(u32::to_string).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.index,
            r.split.as_str(),
            r.gold,
            code.join(" "),
            r.predicted_entity.as_deref().unwrap_or("-"),
            r.valid as u8,
            r.correct as u8,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_mean_basics() {
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert_eq!(harmonic_mean(40.0, 0.0), 0.0);
        assert!((harmonic_mean(37.5, 37.5) - 37.5).abs() < 1e-12);
        assert_eq!(format!("{:.1}", harmonic_mean(28.3, 11.2)), "16.0");
        assert_eq!(format!("{:.1}", harmonic_mean(31.5, 17.7)), "22.7");
    }
}
