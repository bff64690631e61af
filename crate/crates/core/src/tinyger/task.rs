//! Synthetic entity-recognition task.
//!
//! Entities are grouped into families. A name is the family word plus one or
//! two attribute words drawn from that family's pool, so related entities
//! share name tokens. An entity's concept vector is its family centroid plus
//! the offsets of its attributes; queries are concepts with Gaussian noise.
//!
//! Family words use pieces of their own. Attribute words are spelled from a
//! small per-family piece pool, so attribute words of one family overlap at
//! the subword level. Nothing is shared across families.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::model::TrainingExample;
use crate::codebook::{CodeBook, EntityRecord};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::tokenizer::{Vocabulary, DEFAULT_CONTINUATION_PREFIX, DEFAULT_UNKNOWN_TOKEN};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub n_entities: usize,
    pub n_families: usize,
    /// Query dimension.
    pub dim: usize,
    /// Standard deviation of the query noise.
    pub sigma: f64,
    pub queries_per_entity: usize,
    /// Standard deviation of each attribute offset.
    pub attribute_scale: f64,
    /// Fraction of each family held out as unseen entities.
    pub unseen_fraction: f64,
    /// Fraction of a seen entity's queries kept for evaluation.
    pub eval_fraction: f64,
    /// Distinct pieces each family spells its attribute words from; 0 gives
    /// every attribute word pieces of its own.
    pub attribute_pieces: usize,
    pub seed: u64,
}

impl TaskConfig {
    pub fn new(n_entities: usize, n_families: usize, dim: usize, sigma: f64, queries_per_entity: usize, seed: u64) -> Self {
        Self {
            n_entities,
            n_families,
            dim,
            sigma,
            queries_per_entity,
            attribute_scale: 0.5,
            unseen_fraction: 0.2,
            eval_fraction: 0.25,
            attribute_pieces: 4,
            seed,
        }
    }

    /// 1000 entities in 20 families, 64 dimensions, noise 0.3, 20 queries each.
    pub fn desk(seed: u64) -> Self {
        Self::new(1000, 20, 64, 0.3, 20, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Seen,
    Unseen,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEntity {
    pub entity_id: String,
    pub name: String,
    pub family: usize,
    /// Indices into the family's attribute pool.
    pub attributes: Vec<usize>,
    pub concept: Vec<f64>,
    pub unseen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskQuery {
    /// Index into `SyntheticTask::entities`.
    pub entity: usize,
    pub vector: Vec<f64>,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub config: TaskConfig,
    pub vocabulary: Vocabulary,
    pub entities: Vec<SyntheticEntity>,
    pub queries: Vec<TaskQuery>,
}

struct PieceSource {
    used: HashSet<String>,
}

impl PieceSource {
    fn piece(&mut self, rng: &mut Rng) -> String {
        loop {
            let mut s = String::with_capacity(5);
            for i in 0..5 {
                let set = if i % 2 == 0 { CONSONANTS } else { VOWELS };
                s.push(set[rng.random_range(0..set.len())] as char);
            }
            if self.used.insert(s.clone()) {
                return s;
            }
        }
    }

    /// A word of `n` fresh pieces.
    fn word(&mut self, n: usize, rng: &mut Rng) -> Vec<String> {
        (0..n).map(|_| self.piece(rng)).collect()
    }
}

/// Vocabulary entries spelling `pieces` as one word.
fn word_tokens(pieces: &[String]) -> impl Iterator<Item = String> + '_ {
    pieces
        .iter()
        .enumerate()
        .map(|(i, p)| if i == 0 { p.clone() } else { format!("{DEFAULT_CONTINUATION_PREFIX}{p}") })
}

/// Smallest pool whose one- and two-word combinations cover `members` with slack.
fn pool_size(members: usize) -> usize {
    let target = members + members.div_ceil(2);
    let mut p = 2;
    while p + p * (p - 1) / 2 < target {
        p += 1;
    }
    p
}

fn gaussian(rng: &mut Rng, dim: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; dim];
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

pub fn make_synthetic_task(config: TaskConfig) -> Result<SyntheticTask> {
    let c = config;
    if c.n_families == 0 || c.n_families > c.n_entities {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= n_families <= n_entities, got {} families for {} entities",
            c.n_families, c.n_entities
        )));
    }
    if c.dim == 0 || c.queries_per_entity == 0 {
        return Err(Error::InvalidParameter("dim and queries_per_entity must be positive".into()));
    }
    if !(c.sigma >= 0.0 && c.sigma.is_finite()) || c.attribute_scale.is_nan() || c.attribute_scale < 0.0 {
        return Err(Error::InvalidParameter("noise scales must be finite and non-negative".into()));
    }
    if !(0.0..1.0).contains(&c.unseen_fraction) || !(0.0..1.0).contains(&c.eval_fraction) {
        return Err(Error::InvalidParameter("split fractions must lie in [0, 1)".into()));
    }

    let mut names_rng = seed::rng(c.seed, "task/names");
    let mut concept_rng = seed::rng(c.seed, "task/concepts");
    let mut split_rng = seed::rng(c.seed, "task/splits");
    let mut query_rng = seed::rng(c.seed, "task/queries");

    let mut pieces = PieceSource { used: HashSet::new() };
    let mut vocab_tokens = vec![DEFAULT_UNKNOWN_TOKEN.to_string()];
    let mut in_vocab: HashSet<String> = HashSet::new();
    let mut add_word = |word: &[String], vocab_tokens: &mut Vec<String>| {
        for t in word_tokens(word) {
            if in_vocab.insert(t.clone()) {
                vocab_tokens.push(t);
            }
        }
    };
    let mut entities = Vec::with_capacity(c.n_entities);

    for family in 0..c.n_families {
        let members = (c.n_entities - family).div_ceil(c.n_families);
        let n_pieces = names_rng.random_range(2..=3);
        let family_pieces = pieces.word(n_pieces, &mut names_rng);
        add_word(&family_pieces, &mut vocab_tokens);
        let family_word = family_pieces.concat();
        let pool = pool_size(members);
        let spelling = if c.attribute_pieces == 0 {
            Vec::new()
        } else {
            // Enough pieces to spell the pool twice over in one- and two-piece words.
            let mut q = c.attribute_pieces.max(2);
            while q + q * q < 2 * pool {
                q += 1;
            }
            pieces.word(q, &mut names_rng)
        };
        let mut attr_words: Vec<String> = Vec::with_capacity(pool);
        let mut spelled = HashSet::new();
        while attr_words.len() < pool {
            let n_pieces = names_rng.random_range(1..=2);
            let word = if spelling.is_empty() {
                pieces.word(n_pieces, &mut names_rng)
            } else {
                (0..n_pieces)
                    .map(|_| spelling[names_rng.random_range(0..spelling.len())].clone())
                    .collect()
            };
            if spelled.insert(word.clone()) {
                add_word(&word, &mut vocab_tokens);
                attr_words.push(word.concat());
            }
        }
        let mut combos: Vec<Vec<usize>> = (0..pool).map(|a| vec![a]).collect();
        for a in 0..pool {
            for b in a + 1..pool {
                combos.push(vec![a, b]);
            }
        }
        combos.shuffle(&mut names_rng);
        combos.truncate(members);

        let centroid = gaussian(&mut concept_rng, c.dim, 1.0);
        let offsets: Vec<Vec<f64>> = (0..pool)
            .map(|_| gaussian(&mut concept_rng, c.dim, c.attribute_scale))
            .collect();

        let mut order: Vec<usize> = (0..members).collect();
        order.shuffle(&mut split_rng);
        let n_unseen = if members >= 2 {
            ((members as f64) * c.unseen_fraction).floor() as usize
        } else {
            0
        };
        let held_out: HashSet<usize> = order[..n_unseen].iter().copied().collect();

        for (m, attrs) in combos.into_iter().enumerate() {
            let mut name = family_word.clone();
            let mut concept = centroid.clone();
            for &a in &attrs {
                name.push(' ');
                name.push_str(&attr_words[a]);
                for (x, o) in concept.iter_mut().zip(&offsets[a]) {
                    *x += o;
                }
            }
            entities.push(SyntheticEntity {
                entity_id: format!("f{family:03}e{m:04}"),
                name,
                family,
                attributes: attrs,
                concept,
                unseen: held_out.contains(&m),
            });
        }
    }

    let vocabulary = Vocabulary::from_tokens(vocab_tokens)?;
    let n_eval = ((c.queries_per_entity as f64) * c.eval_fraction).round() as usize;
    let mut queries = Vec::with_capacity(c.n_entities * c.queries_per_entity);
    for (i, e) in entities.iter().enumerate() {
        for q in 0..c.queries_per_entity {
            let noise = gaussian(&mut query_rng, c.dim, c.sigma);
            let split = if e.unseen {
                Split::Unseen
            } else if q < c.queries_per_entity - n_eval.min(c.queries_per_entity - 1) {
                Split::Train
            } else {
                Split::Seen
            };
            queries.push(TaskQuery {
                entity: i,
                vector: e.concept.iter().zip(&noise).map(|(a, b)| a + b).collect(),
                split,
            });
        }
    }
    Ok(SyntheticTask {
        config,
        vocabulary,
        entities,
        queries,
    })
}

impl SyntheticTask {
    pub fn records(&self) -> Vec<EntityRecord> {
        self.entities
            .iter()
            .map(|e| EntityRecord::new(e.entity_id.clone(), e.name.clone()))
            .collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TaskQuery> {
        self.queries.iter().filter(move |q| q.split == split)
    }

    /// Training examples targeting each entity's code in `book`.
    pub fn training_examples(&self, book: &CodeBook) -> Result<Vec<TrainingExample>> {
        self.split(Split::Train)
            .map(|q| {
                let e = &self.entities[q.entity];
                let code = book.code_of(&e.entity_id).ok_or_else(|| {
                    Error::InvalidParameter(format!("entity {:?} has no code", e.entity_id))
                })?;
                Ok(TrainingExample {
                    query: q.vector.clone(),
                    target: code.values.clone(),
                })
            })
            .collect()
    }
}
