use std::cmp::Ordering;

use ald::dataset::{cosine, AssignedPair, CorpusItem, Eviction, Retrieval};
use ald::embedding::EmbeddingMatrix;
use ald::seed;
use rand::Rng;

pub struct Instance {
    pub entities: EmbeddingMatrix,
    pub items: Vec<CorpusItem>,
    pub eval_items: Vec<CorpusItem>,
}

/// Small integer vectors so exact similarity ties are common.
pub fn instance(seed: u64, n_entities: usize, n_items: usize, n_eval: usize, dim: usize) -> Instance {
    let mut rng = seed::rng(seed, "test/dataset");
    let vector = |rng: &mut seed::Rng| -> Vec<f32> {
        loop {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-2i32..=2) as f32).collect();
            if v.iter().any(|&x| x != 0.0) {
                return v;
            }
        }
    };
    let rows: Vec<Vec<f32>> = (0..n_entities).map(|_| vector(&mut rng)).collect();
    let entities = EmbeddingMatrix::from_rows((0..n_entities).map(|i| format!("e{i:03}")).collect(), &rows).unwrap();
    // Ids are shuffled so id order differs from insertion order.
    let mut ids: Vec<usize> = (0..n_items).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let items = ids.iter().map(|&i| CorpusItem::new(format!("i{i:05}"), vector(&mut rng))).collect();
    let eval_items = (0..n_eval)
        .map(|i| {
            let mut it = CorpusItem::new(format!("v{i:04}"), vector(&mut rng));
            it.is_eval = true;
            it
        })
        .collect();
    Instance {
        entities,
        items,
        eval_items,
    }
}

pub fn better(a: (f64, &str), b: (f64, &str)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Full sort, then truncate.
pub fn brute_topk(inst: &Instance, k: usize) -> Vec<Vec<(String, f64)>> {
    inst.entities
        .rows()
        .map(|row| {
            let mut all: Vec<(String, f64)> = inst
                .items
                .iter()
                .map(|it| (it.item_id.clone(), cosine(row, &it.caption_embedding)))
                .collect();
            all.sort_by(|a, b| {
                if better((a.1, &a.0), (b.1, &b.0)) {
                    Ordering::Less
                } else {
                    Ordering::Greater
                }
            });
            all.truncate(k);
            all
        })
        .collect()
}

/// For every item, scan every claim and keep the best one.
pub fn brute_assign(retrievals: &[Retrieval]) -> Vec<AssignedPair> {
    let mut items: Vec<&str> = retrievals
        .iter()
        .flat_map(|r| r.hits.iter().map(|h| h.item_id.as_str()))
        .collect();
    items.sort();
    items.dedup();
    let mut out = Vec::new();
    for item in items {
        let mut best: Option<(f64, &str)> = None;
        for r in retrievals {
            for h in r.hits.iter().filter(|h| h.item_id == item) {
                let claim = (h.similarity, r.entity_id.as_str());
                if best.is_none_or(|b| better(claim, b)) {
                    best = Some(claim);
                }
            }
        }
        let (similarity, entity) = best.unwrap();
        out.push(AssignedPair {
            item_id: item.to_string(),
            entity_id: entity.to_string(),
            similarity,
        });
    }
    out.sort_by(|a, b| {
        a.entity_id
            .cmp(&b.entity_id)
            .then(b.similarity.partial_cmp(&a.similarity).unwrap())
            .then(a.item_id.cmp(&b.item_id))
    });
    out
}

pub fn brute_leakage(inst: &Instance, pairs: &[AssignedPair], threshold: f64) -> (Vec<AssignedPair>, Vec<Eviction>) {
    let mut kept = Vec::new();
    let mut evicted = Vec::new();
    for p in pairs {
        let item = inst.items.iter().find(|it| it.item_id == p.item_id).unwrap();
        let mut worst: Option<(f64, &str)> = None;
        for ev in &inst.eval_items {
            let s = cosine(&item.caption_embedding, &ev.caption_embedding);
            if s > threshold && worst.is_none_or(|w| better((s, &ev.item_id), w)) {
                worst = Some((s, &ev.item_id));
            }
        }
        match worst {
            Some((similarity, id)) => evicted.push(Eviction {
                item_id: p.item_id.clone(),
                eval_item_id: id.to_string(),
                similarity,
            }),
            None => kept.push(p.clone()),
        }
    }
    (kept, evicted)
}

