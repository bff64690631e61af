//! Entity-based pretraining set construction: exhaustive top-k caption
//! retrieval per entity, one-entity-per-item assignment, and eviction of items
//! that nearly duplicate an evaluation item.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, l2_normalized, EmbeddingMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_LEAKAGE_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub item_id: String,
    pub caption_embedding: Vec<f32>,
    pub is_eval: bool,
}

impl CorpusItem {
    pub fn new(item_id: impl Into<String>, caption_embedding: Vec<f32>) -> Self {
        Self {
            item_id: item_id.into(),
            caption_embedding,
            is_eval: false,
        }
    }
}

pub fn items_from_matrix(m: &EmbeddingMatrix, is_eval: bool) -> Vec<CorpusItem> {
    m.ids()
        .iter()
        .zip(m.rows())
        .map(|(id, row)| CorpusItem {
            item_id: id.clone(),
            caption_embedding: row.to_vec(),
            is_eval,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub item_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub entity_id: String,
    /// Best first; ties by ascending item id.
    pub hits: Vec<Hit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedPair {
    pub item_id: String,
    pub entity_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eviction {
    pub item_id: String,
    pub eval_item_id: String,
    pub similarity: f64,
}

/// Cosine similarity; zero vectors are orthogonal to everything.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    dot(&l2_normalized(a), &l2_normalized(b))
}

/// Descending similarity. Adding 0.0 folds -0.0 into 0.0 so `total_cmp`
/// treats them as the tie they are.
fn by_similarity(a: f64, b: f64) -> Ordering {
    (b + 0.0).total_cmp(&(a + 0.0))
}

fn by_similarity_then_id(a: (f64, &str), b: (f64, &str)) -> Ordering {
    by_similarity(a.0, b.0).then_with(|| a.1.cmp(b.1))
}

fn normalized_items(items: &[CorpusItem], dim: usize) -> Result<Vec<Vec<f64>>> {
    items
        .iter()
        .map(|it| {
            if it.caption_embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: it.caption_embedding.len(),
                });
            }
            if it.caption_embedding.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("item {}", it.item_id)));
            }
            Ok(l2_normalized(&it.caption_embedding))
        })
        .collect()
}

/// Exact cosine top-`k` items for every entity.
pub fn topk_retrieve(entity_emb: &EmbeddingMatrix, items: &[CorpusItem], k: usize) -> Result<Vec<Retrieval>> {
    if k == 0 {
        return Err(Error::InvalidParameter("top-k needs k >= 1".into()));
    }
    let dim = entity_emb.dim();
    let unit_items = normalized_items(items, dim)?;
    let retrievals = entity_emb
        .ids()
        .par_iter()
        .zip(entity_emb.rows().collect::<Vec<_>>())
        .map(|(entity_id, row)| {
            let query = l2_normalized(row);
            let mut scored: Vec<(f64, &str)> = unit_items
                .iter()
                .zip(items)
                .map(|(u, it)| (dot(&query, u), it.item_id.as_str()))
                .collect();
            let keep = k.min(scored.len());
            if keep < scored.len() {
                scored.select_nth_unstable_by(keep, |a, b| by_similarity_then_id(*a, *b));
                scored.truncate(keep);
            }
            scored.sort_by(|a, b| by_similarity_then_id(*a, *b));
            Retrieval {
                entity_id: entity_id.clone(),
                hits: scored
                    .into_iter()
                    .map(|(similarity, id)| Hit {
                        item_id: id.to_string(),
                        similarity,
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(retrievals)
}

/// Keeps every item only for its most similar claiming entity (ties by
/// ascending entity id). Output is sorted by entity id, then similarity
/// descending, then item id.
pub fn assign_unique(retrievals: &[Retrieval]) -> Vec<AssignedPair> {
    let mut best: HashMap<&str, (f64, &str)> = HashMap::new();
    for r in retrievals {
        for hit in &r.hits {
            let claim = (hit.similarity, r.entity_id.as_str());
            best.entry(hit.item_id.as_str())
                .and_modify(|cur| {
                    if by_similarity_then_id(claim, *cur) == Ordering::Less {
                        *cur = claim;
                    }
                })
                .or_insert(claim);
        }
    }
    let mut pairs: Vec<AssignedPair> = best
        .into_iter()
        .map(|(item, (similarity, entity))| AssignedPair {
            item_id: item.to_string(),
            entity_id: entity.to_string(),
            similarity,
        })
        .collect();
    pairs.sort_by(|a, b| {
        a.entity_id
            .cmp(&b.entity_id)
            .then_with(|| by_similarity(a.similarity, b.similarity))
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    pairs
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakageReport {
    pub kept: Vec<AssignedPair>,
    /// One line per evicted pair, naming its most similar evaluation item.
    pub evictions: Vec<Eviction>,
}

/// Drops every pair whose item has cosine similarity strictly above
/// `threshold` with any evaluation item.
pub fn leakage_filter(
    pairs: &[AssignedPair],
    items: &[CorpusItem],
    eval_items: &[CorpusItem],
    threshold: f64,
) -> Result<LeakageReport> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} outside (0, 1]")));
    }
    let dim = items
        .first()
        .or(eval_items.first())
        .map_or(0, |it| it.caption_embedding.len());
    let unit_items = normalized_items(items, dim)?;
    let unit_eval = normalized_items(eval_items, dim)?;
    let index: HashMap<&str, usize> = items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.item_id.as_str(), i))
        .collect();

    let verdicts: Vec<Result<Option<Eviction>>> = pairs
        .par_iter()
        .map(|pair| {
            let &i = index.get(pair.item_id.as_str()).ok_or_else(|| {
                Error::InvalidParameter(format!("pair references unknown item {}", pair.item_id))
            })?;
            let mut worst: Option<(f64, &str)> = None;
            for (u, ev) in unit_eval.iter().zip(eval_items) {
                let s = dot(&unit_items[i], u);
                if s > threshold
                    && worst.is_none_or(|w| by_similarity_then_id((s, &ev.item_id), w) == Ordering::Less)
                {
                    worst = Some((s, &ev.item_id));
                }
            }
            Ok(worst.map(|(similarity, eval_id)| Eviction {
                item_id: pair.item_id.clone(),
                eval_item_id: eval_id.to_string(),
                similarity,
            }))
        })
        .collect();

    let mut kept = Vec::new();
    let mut evictions = Vec::new();
    for (pair, verdict) in pairs.iter().zip(verdicts) {
        match verdict? {
            Some(ev) => evictions.push(ev),
            None => kept.push(pair.clone()),
        }
    }
    Ok(LeakageReport { kept, evictions })
}

pub fn pairs_to_jsonl(pairs: &[AssignedPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pairs serialize"));
        out.push('\n');
    }
    out
}

pub fn evictions_to_tsv(evictions: &[Eviction]) -> String {
    let mut out = String::new();
    for e in evictions {
        let _ = writeln!(out, "{}\t{}\t{}", e.item_id, e.eval_item_id, e.similarity);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, v: &[f32]) -> CorpusItem {
        CorpusItem::new(id, v.to_vec())
    }

    #[test]
    fn identical_vector_ranks_first() {
        let ents = EmbeddingMatrix::from_rows(vec!["A".into()], &[vec![0.6, 0.8]]).unwrap();
        let items = vec![item("x", &[1.0, 0.0]), item("y", &[3.0, 4.0]), item("z", &[0.0, 1.0])];
        let r = topk_retrieve(&ents, &items, 2).unwrap();
        assert_eq!(r[0].hits[0].item_id, "y");
        assert!((r[0].hits[0].similarity - 1.0).abs() < 1e-12);
        assert_eq!(r[0].hits.len(), 2);
        assert_eq!(r[0].hits[1].item_id, "z");
    }

    #[test]
    fn ties_by_item_id() {
        let ents = EmbeddingMatrix::from_rows(vec!["A".into()], &[vec![1.0, 0.0]]).unwrap();
        let items = vec![item("b", &[1.0, 1.0]), item("a", &[1.0, -1.0])];
        let r = topk_retrieve(&ents, &items, 1).unwrap();
        assert_eq!(r[0].hits[0].item_id, "a");
    }

    #[test]
    fn dimension_mismatch() {
        let ents = EmbeddingMatrix::from_rows(vec!["A".into()], &[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            topk_retrieve(&ents, &[item("x", &[1.0])], 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn max_similarity_claim_wins() {
        let r = vec![
            Retrieval {
                entity_id: "B".into(),
                hits: vec![Hit { item_id: "i".into(), similarity: 0.8 }],
            },
            Retrieval {
                entity_id: "A".into(),
                hits: vec![
                    Hit { item_id: "i".into(), similarity: 0.9 },
                    Hit { item_id: "j".into(), similarity: 0.5 },
                ],
            },
        ];
        let pairs = assign_unique(&r);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].entity_id, "A");
        assert_eq!(pairs[0].item_id, "i");
        assert_eq!(pairs[1].item_id, "j");
    }

    #[test]
    fn equal_claims_go_to_smaller_entity() {
        let hit = Hit { item_id: "i".into(), similarity: 0.7 };
        let r = vec![
            Retrieval { entity_id: "Z".into(), hits: vec![hit.clone()] },
            Retrieval { entity_id: "M".into(), hits: vec![hit] },
        ];
        assert_eq!(assign_unique(&r)[0].entity_id, "M");
    }

    #[test]
    fn leakage_evicts_duplicates_only() {
        let items = vec![item("dup", &[1.0, 2.0]), item("far", &[0.0, 1.0])];
        let eval = vec![item("e1", &[2.0, 4.0]), item("e2", &[1.0, 0.0])];
        let pairs = vec![
            AssignedPair { item_id: "dup".into(), entity_id: "A".into(), similarity: 0.5 },
            AssignedPair { item_id: "far".into(), entity_id: "A".into(), similarity: 0.4 },
        ];
        let eval_orth = vec![item("e2", &[1.0, 0.0])];
        let report = leakage_filter(&pairs, &items, &eval, DEFAULT_LEAKAGE_THRESHOLD).unwrap();
        assert_eq!(report.kept.len(), 1);
        assert_eq!(report.kept[0].item_id, "far");
        assert_eq!(report.evictions[0].eval_item_id, "e1");
        let untouched = leakage_filter(&pairs[1..], &items, &eval_orth, 0.95).unwrap();
        assert!(untouched.evictions.is_empty());
        assert!(leakage_filter(&pairs, &items, &eval, 0.0).is_err());
        assert!(leakage_filter(&pairs, &items, &eval, 1.5).is_err());
    }

    #[test]
    fn output_formats() {
        let pairs = vec![AssignedPair { item_id: "i".into(), entity_id: "Q1".into(), similarity: 0.5 }];
        assert_eq!(pairs_to_jsonl(&pairs), "{\"item_id\":\"i\",\"entity_id\":\"Q1\",\"similarity\":0.5}\n");
        let ev = vec![Eviction { item_id: "i".into(), eval_item_id: "e".into(), similarity: 0.99 }];
        assert_eq!(evictions_to_tsv(&ev), "i\te\t0.99\n");
    }
}
