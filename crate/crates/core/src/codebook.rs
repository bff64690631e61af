//! Corpus token frequencies and entity code construction.
//!
//! Four schemes produce a [`CodeBook`]:
//!
//! * **ald** keeps the `L-1` rarest (deduplicated) subword tokens of the entity
//!   name, least frequent first, then picks the last token greedily from the
//!   remaining rare tokens until the code is unique, falling back to a seeded
//!   random value in `[1, V]`.
//! * **atomic** draws codes uniformly without replacement from `[1, V]^L`.
//! * **caption** uses the (optionally truncated) tokenized name followed by the
//!   end-of-code value `V + 1`.
//! * **hkc** codes come from [`crate::hkc`].
//!
//! Entities are processed in input order; that order is part of the
//! determinism contract because the greedy uniqueness pass depends on it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tokenizer::{TokenSequence, TokenValue, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub name: String,
}

impl EntityRecord {
    pub fn new(entity_id: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            entity_id: entity_id.into(),
            name: name.into(),
        }
    }
}

/// Parses the `entity_id<TAB>name` format. Blank lines are skipped.
pub fn parse_entities(text: &str, source_name: &str) -> Result<Vec<EntityRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source_name, i + 1, "expected entity_id<TAB>name"))?;
        if id.is_empty() {
            return Err(Error::parse(source_name, i + 1, "empty entity id"));
        }
        if name.trim().is_empty() {
            return Err(Error::parse(source_name, i + 1, "empty entity name"));
        }
        out.push(EntityRecord::new(id, name));
    }
    validate_entities(&out)?;
    Ok(out)
}

pub fn load_entities(path: impl AsRef<Path>) -> Result<Vec<EntityRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_entities(&text, &path.display().to_string())
}

pub fn validate_entities(entities: &[EntityRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(entities.len());
    for e in entities {
        if e.name.trim().is_empty() {
            return Err(Error::EmptyName);
        }
        if !seen.insert(e.entity_id.as_str()) {
            return Err(Error::DuplicateEntity(e.entity_id.clone()));
        }
    }
    Ok(())
}

pub fn tokenize_corpus(vocab: &Vocabulary, entities: &[EntityRecord]) -> Result<Vec<TokenSequence>> {
    entities.par_iter().map(|e| vocab.tokenize(&e.name)).collect()
}

/// Occurrence counts `n_v` of every token value over a tokenized corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenFrequencyTable {
    counts: Vec<u64>,
    total: u64,
}

impl TokenFrequencyTable {
    pub fn from_sequences(vocab_size: usize, sequences: &[TokenSequence]) -> Self {
        const SHARD: usize = 4096;
        let counts = sequences
            .par_chunks(SHARD)
            .map(|shard| {
                let mut counts = vec![0u64; vocab_size + 1];
                for seq in shard {
                    for &v in &seq.values {
                        counts[v as usize] += 1;
                    }
                }
                counts
            })
            .reduce(
                || vec![0u64; vocab_size + 1],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            );
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn count(&self, value: TokenValue) -> u64 {
        self.counts.get(value as usize).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len() - 1
    }

    /// `f_v = n_v / sum_u n_u`.
    pub fn frequency(&self, value: TokenValue) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(value) as f64 / self.total as f64
        }
    }

    /// Rank key for "least frequent": count, then token value. Comparing counts
    /// is exact and orders identically to comparing `f_v`.
    pub fn rarity_key(&self, value: TokenValue) -> (u64, TokenValue) {
        (self.count(value), value)
    }

    /// Values with a nonzero count, ascending by frequency then by value.
    pub fn ascending(&self) -> Vec<TokenValue> {
        let mut values: Vec<TokenValue> = (1..self.counts.len() as TokenValue)
            .filter(|&v| self.counts[v as usize] > 0)
            .collect();
        values.sort_by_key(|&v| self.rarity_key(v));
        values
    }

    /// TSV dump `token_value<TAB>token_string<TAB>count<TAB>frequency`.
    pub fn to_tsv(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for v in self.ascending() {
            let _ = writeln!(
                out,
                "{v}\t{}\t{}\t{:.12e}",
                vocab.token(v).unwrap_or(""),
                self.count(v),
                self.frequency(v)
            );
        }
        out
    }
}

/// Tokenizes the corpus and counts every token occurrence, repeats included.
pub fn build_frequency_table(vocab: &Vocabulary, entities: &[EntityRecord]) -> Result<TokenFrequencyTable> {
    if entities.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sequences = tokenize_corpus(vocab, entities)?;
    Ok(TokenFrequencyTable::from_sequences(vocab.size(), &sequences))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeFlags {
    pub used_random_fallback: bool,
    /// Extra candidates tried for the last position before the code became unique.
    pub disambiguation_steps: u32,
}

impl fmt::Display for CodeFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.used_random_fallback {
            f.write_str("R")
        } else if self.disambiguation_steps > 0 {
            write!(f, "D{}", self.disambiguation_steps)
        } else {
            f.write_str("-")
        }
    }
}

impl FromStr for CodeFlags {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "-" => Ok(Self::default()),
            "R" => Ok(Self {
                used_random_fallback: true,
                disambiguation_steps: 0,
            }),
            _ => {
                let k = s
                    .strip_prefix('D')
                    .and_then(|k| k.parse::<u32>().ok())
                    .filter(|&k| k > 0)
                    .ok_or_else(|| format!("bad flags {s:?}"))?;
                Ok(Self {
                    used_random_fallback: false,
                    disambiguation_steps: k,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Code {
    pub values: Vec<TokenValue>,
    pub flags: CodeFlags,
}

impl Code {
    pub fn new(values: Vec<TokenValue>) -> Self {
        Self {
            values,
            flags: CodeFlags::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ald,
    Atomic,
    Caption,
    Hkc,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Ald => "ald",
            Scheme::Atomic => "atomic",
            Scheme::Caption => "caption",
            Scheme::Hkc => "hkc",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ald" => Ok(Scheme::Ald),
            "atomic" => Ok(Scheme::Atomic),
            "caption" => Ok(Scheme::Caption),
            "hkc" => Ok(Scheme::Hkc),
            other => Err(Error::InvalidParameter(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeParams {
    /// Code length `L`; for caption codes the truncation length, 0 when untruncated.
    pub length: usize,
    /// Size `V` of the code token alphabet; stored values lie in `[1, V]`
    /// except the caption end-of-code value `V + 1`.
    pub vocab_size: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeEntry {
    pub entity_id: String,
    pub code: Code,
}

/// Bijection between entity ids and codes.
#[derive(Debug, Clone)]
pub struct CodeBook {
    scheme: Scheme,
    params: CodeParams,
    entries: Vec<CodeEntry>,
    by_id: HashMap<String, usize>,
    by_code: HashMap<Vec<TokenValue>, usize>,
}

impl CodeBook {
    pub fn from_entries(scheme: Scheme, params: CodeParams, entries: Vec<CodeEntry>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(entries.len());
        let mut by_code = HashMap::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            if by_id.insert(entry.entity_id.clone(), i).is_some() {
                return Err(Error::DuplicateEntity(entry.entity_id.clone()));
            }
            if by_code.insert(entry.code.values.clone(), i).is_some() {
                return Err(Error::DuplicateCode {
                    entity_id: entry.entity_id.clone(),
                    code: entry.code.values.clone(),
                });
            }
        }
        Ok(Self {
            scheme,
            params,
            entries,
            by_id,
            by_code,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn params(&self) -> CodeParams {
        self.params
    }

    pub fn vocab_size(&self) -> u32 {
        self.params.vocab_size
    }

    /// End-of-code value for variable-length (caption) books.
    pub fn end_of_code(&self) -> Option<TokenValue> {
        (self.scheme == Scheme::Caption).then_some(self.params.vocab_size + 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CodeEntry] {
        &self.entries
    }

    pub fn code_of(&self, entity_id: &str) -> Option<&Code> {
        self.by_id.get(entity_id).map(|&i| &self.entries[i].code)
    }

    pub fn entity_of(&self, code: &[TokenValue]) -> Option<&str> {
        self.by_code.get(code).map(|&i| self.entries[i].entity_id.as_str())
    }

    pub fn max_code_len(&self) -> usize {
        self.entries.iter().map(|e| e.code.len()).max().unwrap_or(0)
    }

    pub fn fallback_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.code.flags.used_random_fallback)
            .count()
    }

    pub fn fallback_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.fallback_count() as f64 / self.entries.len() as f64
        }
    }

    /// Histogram of disambiguation steps among entries that did not fall back.
    pub fn disambiguation_histogram(&self) -> BTreeMap<u32, usize> {
        let mut hist = BTreeMap::new();
        for e in self.entries.iter().filter(|e| !e.code.flags.used_random_fallback) {
            *hist.entry(e.code.flags.disambiguation_steps).or_insert(0) += 1;
        }
        hist
    }

    /// Codes TSV `entity_id<TAB>v1,...,vL<TAB>flags`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 24);
        for e in &self.entries {
            out.push_str(&e.entity_id);
            out.push('\t');
            for (i, v) in e.code.values.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            let _ = writeln!(out, "\t{}", e.code.flags);
        }
        out
    }

    pub fn parse_tsv(text: &str, source_name: &str, scheme: Scheme, params: CodeParams) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(source_name, i + 1, "expected 3 tab-separated fields"));
            }
            let values = fields[1]
                .split(',')
                .map(|v| v.parse::<TokenValue>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(source_name, i + 1, format!("bad code value: {e}")))?;
            let flags = fields[2]
                .parse::<CodeFlags>()
                .map_err(|e| Error::parse(source_name, i + 1, e))?;
            entries.push(CodeEntry {
                entity_id: fields[0].to_string(),
                code: Code { values, flags },
            });
        }
        Self::from_entries(scheme, params, entries)
    }
}

/// Which `L-1` tokens of a name go into the leading code positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSelection {
    LeastFrequent,
    MostFrequent,
    First,
    Random,
}

/// How the selected tokens are ordered inside the code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenOrder {
    LeastFirst,
    Syntax,
    Random,
    LeastLast,
}

impl FromStr for TokenSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least_frequent" => Ok(Self::LeastFrequent),
            "most_frequent" => Ok(Self::MostFrequent),
            "first" => Ok(Self::First),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidParameter(format!("unknown token selection {other:?}"))),
        }
    }
}

impl FromStr for TokenOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least_first" => Ok(Self::LeastFirst),
            "syntax" => Ok(Self::Syntax),
            "random" => Ok(Self::Random),
            "least_last" => Ok(Self::LeastLast),
            other => Err(Error::InvalidParameter(format!("unknown token order {other:?}"))),
        }
    }
}

impl fmt::Display for TokenSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LeastFrequent => "least_frequent",
            Self::MostFrequent => "most_frequent",
            Self::First => "first",
            Self::Random => "random",
        })
    }
}

impl fmt::Display for TokenOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LeastFirst => "least_first",
            Self::Syntax => "syntax",
            Self::Random => "random",
            Self::LeastLast => "least_last",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AldOptions {
    pub length: usize,
    pub seed: u64,
    pub selection: TokenSelection,
    pub order: TokenOrder,
    /// Random draws allowed per entity before giving up; `None` means `10 * V`.
    pub max_random_draws: Option<u64>,
}

impl AldOptions {
    pub fn new(length: usize, seed: u64) -> Self {
        Self {
            length,
            seed,
            selection: TokenSelection::LeastFrequent,
            order: TokenOrder::LeastFirst,
            max_random_draws: None,
        }
    }

    pub fn with_strategy(mut self, selection: TokenSelection, order: TokenOrder) -> Self {
        self.selection = selection;
        self.order = order;
        self
    }
}

/// First-occurrence deduplication, keeping name order.
pub fn dedup_tokens(values: &[TokenValue]) -> Vec<TokenValue> {
    let mut seen = HashSet::with_capacity(values.len());
    values.iter().copied().filter(|v| seen.insert(*v)).collect()
}

/// Draws the last position at random until the code is unique.
fn random_last(
    code: &mut [TokenValue],
    taken: &HashSet<Vec<TokenValue>>,
    vocab_size: u32,
    max_draws: u64,
    rng: &mut seed::Rng,
    entity_id: &str,
) -> Result<()> {
    let last = code.len() - 1;
    for _ in 0..max_draws {
        code[last] = rng.random_range(1..=vocab_size);
        if !taken.contains(code) {
            return Ok(());
        }
    }
    Err(Error::UniquenessUnattainable {
        entity_id: entity_id.to_string(),
        attempts: max_draws,
    })
}

/// Tries `candidates` for the last position in turn, then random values.
fn disambiguate_last(
    code: &mut Vec<TokenValue>,
    candidates: &[TokenValue],
    taken: &HashSet<Vec<TokenValue>>,
    vocab_size: u32,
    max_draws: u64,
    rng: &mut seed::Rng,
    entity_id: &str,
) -> Result<CodeFlags> {
    let last = code.len() - 1;
    for (steps, &cand) in candidates.iter().enumerate() {
        code[last] = cand;
        if !taken.contains(code) {
            return Ok(CodeFlags {
                used_random_fallback: false,
                disambiguation_steps: steps as u32,
            });
        }
    }
    random_last(code, taken, vocab_size, max_draws, rng, entity_id)?;
    Ok(CodeFlags {
        used_random_fallback: true,
        disambiguation_steps: 0,
    })
}

/// The ALD pipeline with the token-selection and token-order strategies exposed.
pub fn ablation_select(vocab: &Vocabulary, entities: &[EntityRecord], opts: AldOptions) -> Result<CodeBook> {
    let len = opts.length;
    if len < 2 {
        return Err(Error::InvalidParameter(format!("code length must be >= 2, got {len}")));
    }
    if entities.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if vocab.is_empty() {
        return Err(Error::InvalidParameter("empty vocabulary".into()));
    }
    validate_entities(entities)?;
    let vocab_size = vocab.size() as u32;
    let max_draws = opts.max_random_draws.unwrap_or(10 * vocab_size as u64);
    let sequences = tokenize_corpus(vocab, entities)?;
    let table = TokenFrequencyTable::from_sequences(vocab.size(), &sequences);

    let mut select_rng = seed::rng(opts.seed, "ald/select");
    let mut fallback_rng = seed::rng(opts.seed, "ald/fallback");
    let mut taken: HashSet<Vec<TokenValue>> = HashSet::with_capacity(entities.len());
    let mut entries = Vec::with_capacity(entities.len());

    for (entity, seq) in entities.iter().zip(&sequences) {
        let unique = dedup_tokens(&seq.values);
        let mut priority = unique.clone();
        match opts.selection {
            TokenSelection::LeastFrequent => priority.sort_by_key(|&v| table.rarity_key(v)),
            TokenSelection::MostFrequent => {
                priority.sort_by_key(|&v| (std::cmp::Reverse(table.count(v)), v))
            }
            TokenSelection::First => {}
            TokenSelection::Random => priority.shuffle(&mut select_rng),
        }
        let lead = (len - 1).min(priority.len());
        let mut selected = priority[..lead].to_vec();
        let rest = &priority[lead..];
        match opts.order {
            TokenOrder::LeastFirst => selected.sort_by_key(|&v| table.rarity_key(v)),
            TokenOrder::LeastLast => {
                selected.sort_by_key(|&v| std::cmp::Reverse(table.rarity_key(v)))
            }
            TokenOrder::Syntax => {
                selected.sort_by_key(|v| unique.iter().position(|u| u == v).unwrap_or(usize::MAX))
            }
            TokenOrder::Random => selected.shuffle(&mut select_rng),
        }

        let mut values = selected;
        let short = values.len() < len - 1;
        while values.len() < len - 1 {
            values.push(fallback_rng.random_range(1..=vocab_size));
        }
        values.push(0);
        let flags = if short {
            random_last(&mut values, &taken, vocab_size, max_draws, &mut fallback_rng, &entity.entity_id)?;
            CodeFlags {
                used_random_fallback: true,
                disambiguation_steps: 0,
            }
        } else {
            disambiguate_last(
                &mut values,
                rest,
                &taken,
                vocab_size,
                max_draws,
                &mut fallback_rng,
                &entity.entity_id,
            )?
        };
        taken.insert(values.clone());
        entries.push(CodeEntry {
            entity_id: entity.entity_id.clone(),
            code: Code { values, flags },
        });
    }
    CodeBook::from_entries(
        Scheme::Ald,
        CodeParams {
            length: len,
            vocab_size,
            seed: opts.seed,
        },
        entries,
    )
}

pub fn build_ald_codes(vocab: &Vocabulary, entities: &[EntityRecord], length: usize, seed: u64) -> Result<CodeBook> {
    ablation_select(vocab, entities, AldOptions::new(length, seed))
}

/// `V^L` if it fits in a `u64`.
fn code_space(vocab_size: u32, length: usize) -> Option<u64> {
    let exp = u32::try_from(length).ok()?;
    (vocab_size as u64).checked_pow(exp)
}

/// Uniform sampling without replacement from `[1, V]^L`.
pub fn build_atomic_codes(entities: &[EntityRecord], length: usize, vocab_size: u32, seed: u64) -> Result<CodeBook> {
    if entities.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if length == 0 || vocab_size == 0 {
        return Err(Error::InvalidParameter("atomic codes need L >= 1 and V >= 1".into()));
    }
    validate_entities(entities)?;
    let n = entities.len();
    let space = code_space(vocab_size, length);
    if let Some(space) = space {
        if space < n as u64 {
            return Err(Error::CodeSpaceTooSmall {
                needed: n,
                available: space.to_string(),
            });
        }
    }
    let mut rng = seed::rng(seed, "atomic");
    let digits = |mut index: u64| {
        let mut values = vec![0; length];
        for slot in values.iter_mut().rev() {
            *slot = (index % vocab_size as u64) as TokenValue + 1;
            index /= vocab_size as u64;
        }
        values
    };
    let codes: Vec<Vec<TokenValue>> = match space.and_then(|s| usize::try_from(s).ok()) {
        Some(space) => rand::seq::index::sample(&mut rng, space, n)
            .into_iter()
            .map(|i| digits(i as u64))
            .collect(),
        None => {
            let mut taken = HashSet::with_capacity(n);
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let code: Vec<TokenValue> = (0..length).map(|_| rng.random_range(1..=vocab_size)).collect();
                if taken.insert(code.clone()) {
                    out.push(code);
                }
            }
            out
        }
    };
    let entries = entities
        .iter()
        .zip(codes)
        .map(|(e, values)| CodeEntry {
            entity_id: e.entity_id.clone(),
            code: Code::new(values),
        })
        .collect();
    CodeBook::from_entries(
        Scheme::Atomic,
        CodeParams {
            length,
            vocab_size,
            seed,
        },
        entries,
    )
}

/// Tokenized names as codes, terminated by `V + 1`.
///
/// With `truncate_at = Some(t)` only the first `t` name tokens are kept.
/// Collisions replace the last kept name token with the rarest unused name
/// tokens, then with seeded random values.
pub fn build_caption_codes(
    vocab: &Vocabulary,
    entities: &[EntityRecord],
    truncate_at: Option<usize>,
    seed: u64,
) -> Result<CodeBook> {
    if entities.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if truncate_at == Some(0) {
        return Err(Error::InvalidParameter("truncation length must be >= 1".into()));
    }
    validate_entities(entities)?;
    let vocab_size = vocab.size() as u32;
    let eoc = vocab_size + 1;
    let sequences = tokenize_corpus(vocab, entities)?;
    let table = TokenFrequencyTable::from_sequences(vocab.size(), &sequences);
    let mut rng = seed::rng(seed, "caption/fallback");
    let mut taken: HashSet<Vec<TokenValue>> = HashSet::with_capacity(entities.len());
    let mut entries = Vec::with_capacity(entities.len());

    for (entity, seq) in entities.iter().zip(&sequences) {
        let keep = truncate_at.map_or(seq.len(), |t| t.min(seq.len()));
        let mut values = seq.values[..keep].to_vec();
        values.push(eoc);
        let mut flags = CodeFlags::default();
        if taken.contains(&values) {
            let kept: HashSet<TokenValue> = values[..keep - 1].iter().copied().collect();
            let mut candidates: Vec<TokenValue> = dedup_tokens(&seq.values[keep..])
                .into_iter()
                .filter(|v| !kept.contains(v) && *v != values[keep - 1])
                .collect();
            candidates.sort_by_key(|&v| table.rarity_key(v));
            // Disambiguate the last name slot, leaving the terminator in place.
            let mut head = values[..keep].to_vec();
            let probe = |head: &[TokenValue]| {
                let mut full = head.to_vec();
                full.push(eoc);
                taken.contains(&full)
            };
            let mut resolved = false;
            for (steps, &cand) in candidates.iter().enumerate() {
                head[keep - 1] = cand;
                if !probe(&head) {
                    flags.disambiguation_steps = steps as u32 + 1;
                    resolved = true;
                    break;
                }
            }
            if !resolved {
                let max_draws = 10 * vocab_size as u64;
                let mut ok = false;
                for _ in 0..max_draws {
                    head[keep - 1] = rng.random_range(1..=vocab_size);
                    if !probe(&head) {
                        ok = true;
                        break;
                    }
                }
                if !ok {
                    return Err(Error::UniquenessUnattainable {
                        entity_id: entity.entity_id.clone(),
                        attempts: max_draws,
                    });
                }
                flags.used_random_fallback = true;
            }
            head.push(eoc);
            values = head;
        }
        taken.insert(values.clone());
        entries.push(CodeEntry {
            entity_id: entity.entity_id.clone(),
            code: Code { values, flags },
        });
    }
    CodeBook::from_entries(
        Scheme::Caption,
        CodeParams {
            length: truncate_at.unwrap_or(0),
            vocab_size,
            seed,
        },
        entries,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::from_tokens(tokens.iter().copied()).unwrap()
    }

    fn ents(names: &[&str]) -> Vec<EntityRecord> {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| EntityRecord::new(format!("Q{i}"), *n))
            .collect()
    }

    #[test]
    fn frequencies_by_hand() {
        let v = vocab(&["a", "b", "c"]);
        let t = build_frequency_table(&v, &ents(&["a b", "a c"])).unwrap();
        assert_eq!(t.total(), 4);
        assert_eq!(t.frequency(1), 0.5);
        assert_eq!(t.frequency(2), 0.25);
        assert_eq!(t.frequency(3), 0.25);

        let single = build_frequency_table(&v, &ents(&["a"])).unwrap();
        assert_eq!(single.frequency(1), 1.0);
        assert!(matches!(build_frequency_table(&v, &[]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn repeats_are_counted() {
        let v = vocab(&["a", "b"]);
        let t = build_frequency_table(&v, &ents(&["a a b"])).unwrap();
        assert_eq!(t.count(1), 2);
        assert_eq!(t.ascending(), vec![2, 1]);
    }

    #[test]
    fn identical_names_disambiguate() {
        let v = vocab(&["cat", "dog"]);
        let book = build_ald_codes(&v, &ents(&["cat dog", "cat dog"]), 2, 0).unwrap();
        let a = &book.entries()[0].code;
        let b = &book.entries()[1].code;
        assert_eq!(a.values[0], b.values[0]);
        assert_ne!(a.values[1], b.values[1]);
        assert_eq!(a.flags, CodeFlags::default());
        assert!(b.flags.used_random_fallback);
    }

    #[test]
    fn greedy_last_token_counts_steps() {
        // "x" is rarest for both entities; the second entity must skip "y".
        let v = vocab(&["x", "y", "z", "w"]);
        let corpus = ents(&["x y", "x y z", "w w w z z z z z z y"]);
        let book = build_ald_codes(&v, &corpus, 2, 0).unwrap();
        assert_eq!(book.entries()[0].code.values, vec![1, 2]);
        assert_eq!(book.entries()[1].code.values, vec![1, 3]);
        assert_eq!(book.entries()[1].code.flags.disambiguation_steps, 1);
        assert_eq!(book.entries()[1].code.flags.to_string(), "D1");
    }

    #[test]
    fn short_names_fall_back() {
        let v = vocab(&["a", "b", "c", "d", "e"]);
        let book = build_ald_codes(&v, &ents(&["a", "a b c d"]), 4, 3).unwrap();
        let c = &book.entries()[0].code;
        assert_eq!(c.values.len(), 4);
        assert_eq!(c.values[0], 1);
        assert!(c.flags.used_random_fallback);
        assert!(c.values.iter().all(|&x| (1..=5).contains(&x)));
    }

    #[test]
    fn ald_rejects_bad_length() {
        let v = vocab(&["a"]);
        assert!(build_ald_codes(&v, &ents(&["a"]), 1, 0).is_err());
    }

    #[test]
    fn uniqueness_cap_reports_entity() {
        // V = 1, L = 2: only one possible code.
        let v = vocab(&["a"]);
        let err = build_ald_codes(&v, &ents(&["a", "a"]), 2, 0).unwrap_err();
        assert!(matches!(err, Error::UniquenessUnattainable { ref entity_id, attempts: 10 } if entity_id == "Q1"));
    }

    #[test]
    fn first_strategy_keeps_name_prefix() {
        let v = vocab(&["a", "b", "c", "d"]);
        let corpus = ents(&["a b c d", "d c", "d"]);
        let book = ablation_select(
            &v,
            &corpus,
            AldOptions::new(3, 0).with_strategy(TokenSelection::First, TokenOrder::Syntax),
        )
        .unwrap();
        assert_eq!(&book.entries()[0].code.values[..2], &[1, 2]);
    }

    #[test]
    fn atomic_tiny_cases() {
        let one = build_atomic_codes(&ents(&["x"]), 1, 1, 0).unwrap();
        assert_eq!(one.entries()[0].code.values, vec![1]);
        assert!(matches!(
            build_atomic_codes(&ents(&["x", "y"]), 1, 1, 0),
            Err(Error::CodeSpaceTooSmall { .. })
        ));
        assert_eq!(code_space(4096, 2), Some(16_777_216));
        assert_eq!(code_space(30522, 5), None);
    }

    #[test]
    fn atomic_hundred_pairs_reproducible() {
        let corpus: Vec<EntityRecord> = (0..100).map(|i| EntityRecord::new(format!("E{i}"), "n")).collect();
        let a = build_atomic_codes(&corpus, 2, 10, 42).unwrap();
        let b = build_atomic_codes(&corpus, 2, 10, 42).unwrap();
        assert_eq!(a.to_tsv(), b.to_tsv());
        let distinct: HashSet<_> = a.entries().iter().map(|e| e.code.values.clone()).collect();
        assert_eq!(distinct.len(), 100);
        assert!(a.entries().iter().all(|e| e.code.values.iter().all(|&v| (1..=10).contains(&v))));
    }

    #[test]
    fn atomic_huge_space_uses_rejection() {
        let corpus = ents(&["a", "b", "c"]);
        let book = build_atomic_codes(&corpus, 6, 30522, 1).unwrap();
        assert_eq!(book.len(), 3);
        assert!(book.entries().iter().all(|e| e.code.len() == 6));
    }

    #[test]
    fn caption_codes() {
        let v = vocab(&["[UNK]", "black", "-", "and", "white", "col", "##ob", "##us"]);
        let corpus = ents(&["Black-and-white colobus", "black and"]);
        let book = build_caption_codes(&v, &corpus, None, 0).unwrap();
        let c = &book.entries()[0].code;
        assert_eq!(c.len(), 9);
        assert_eq!(*c.values.last().unwrap(), 9);
        assert_eq!(book.end_of_code(), Some(9));

        // Both names start with "black -"/"black and"... share the first token only.
        let corpus = ents(&["black and white", "black and col"]);
        let book = build_caption_codes(&v, &corpus, Some(2), 0).unwrap();
        assert_eq!(book.entries()[0].code.values, vec![2, 4, 9]);
        let second = &book.entries()[1].code;
        assert_ne!(second.values, book.entries()[0].code.values);
        assert_eq!(second.values, vec![2, 6, 9]);
        assert_eq!(second.flags.disambiguation_steps, 1);
    }

    #[test]
    fn caption_duplicate_names_random() {
        let v = vocab(&["[UNK]", "cat"]);
        let book = build_caption_codes(&v, &ents(&["cat", "cat"]), None, 0).unwrap();
        assert!(book.entries()[1].code.flags.used_random_fallback);
        assert_eq!(book.entries()[1].code.values.last(), Some(&3));
    }

    #[test]
    fn tsv_round_trip() {
        let v = vocab(&["cat", "dog", "eel"]);
        let book = build_ald_codes(&v, &ents(&["cat dog", "cat dog", "eel"]), 2, 9).unwrap();
        let text = book.to_tsv();
        let back = CodeBook::parse_tsv(&text, "codes.tsv", Scheme::Ald, book.params()).unwrap();
        assert_eq!(back.entries(), book.entries());
        assert!("D0".parse::<CodeFlags>().is_err());
    }

    #[test]
    fn entity_parsing_errors() {
        assert!(parse_entities("Q1\tcat\nQ1\tdog\n", "e").is_err());
        assert!(matches!(parse_entities("Q1 cat\n", "e"), Err(Error::Parse { line: 1, .. })));
        let ok = parse_entities("Q1\tBlack colobus\n\nQ2\tcat\n", "e").unwrap();
        assert_eq!(ok.len(), 2);
    }
}
