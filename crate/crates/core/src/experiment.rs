//! End-to-end runs on the synthetic task: codes, training, evaluation.

use serde::{Deserialize, Serialize};

use crate::codebook::{build_ald_codes, build_atomic_codes, build_caption_codes, tokenize_corpus, CodeBook, Scheme};
use crate::codetrie::CodeTrie;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalQuery, EvalReport, ModelDecoder, QueryResult};
use crate::hkc::build_hkc_codes;
use crate::seed;
use crate::tinyger::{train, DecodeOptions, ModelConfig, Split, SyntheticTask, TinyGerModel, TrainConfig, TrainReport};

/// Branching factor and depth limit for hierarchical codes on the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HkcSettings {
    pub k: usize,
    pub max_depth: usize,
}

impl Default for HkcSettings {
    fn default() -> Self {
        Self { k: 16, max_depth: 4 }
    }
}

/// Codes for every task entity. `length` is `L` for ald and atomic and the
/// truncation length for caption codes (0 keeps whole names). Atomic codes
/// draw from the task vocabulary size so both share one code space.
pub fn task_codebook(task: &SyntheticTask, scheme: Scheme, length: usize, hkc: HkcSettings, seed: u64) -> Result<CodeBook> {
    let records = task.records();
    match scheme {
        Scheme::Ald => build_ald_codes(&task.vocabulary, &records, length, seed),
        Scheme::Atomic => build_atomic_codes(&records, length, task.vocabulary.size() as u32, seed),
        Scheme::Caption => build_caption_codes(&task.vocabulary, &records, (length > 0).then_some(length), seed),
        Scheme::Hkc => {
            let ids = records.iter().map(|r| r.entity_id.clone()).collect();
            let data = task
                .entities
                .iter()
                .flat_map(|e| e.concept.iter().map(|&x| x as f32))
                .collect();
            let emb = EmbeddingMatrix::new(ids, task.config.dim, data)?;
            build_hkc_codes(&emb, hkc.k, hkc.max_depth, seed)
        }
    }
}

pub fn eval_queries(task: &SyntheticTask) -> Result<Vec<EvalQuery>> {
    let seqs = tokenize_corpus(&task.vocabulary, &task.records())?;
    Ok(task
        .queries
        .iter()
        .filter(|q| q.split != Split::Train)
        .map(|q| EvalQuery {
            entity_id: task.entities[q.entity].entity_id.clone(),
            query: q.vector.clone(),
            split: q.split,
            name_len: seqs[q.entity].len(),
        })
        .collect())
}

pub fn model_config(task: &SyntheticTask, book: &CodeBook, train: &TrainConfig) -> ModelConfig {
    ModelConfig {
        vocab_size: book.vocab_size(),
        d_model: train.d_model,
        n_layers: train.n_layers,
        n_heads: train.n_heads,
        d_ff: 4 * train.d_model,
        d_query: task.config.dim,
        n_query: 1,
        max_code_len: book.max_code_len(),
        seed: seed::derive_seed(train.seed, "model"),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub scheme: Scheme,
    pub code_length: usize,
    pub max_code_len: usize,
    pub fallback_fraction: f64,
    pub train: TrainReport,
    pub report: EvalReport,
}

/// Trained model plus everything needed to decode with it.
pub struct TrainedRun {
    pub book: CodeBook,
    pub trie: CodeTrie,
    pub model: TinyGerModel,
    pub train: TrainReport,
}

pub fn train_on_task(task: &SyntheticTask, cfg: &TrainConfig, hkc: HkcSettings) -> Result<TrainedRun> {
    let book = task_codebook(task, cfg.scheme, cfg.code_length, hkc, cfg.seed)?;
    let trie = CodeTrie::build(&book)?;
    let examples = task.training_examples(&book)?;
    let mut model = TinyGerModel::new(model_config(task, &book, cfg))?;
    let report = train(&mut model, &examples, cfg)?;
    Ok(TrainedRun {
        book,
        trie,
        model,
        train: report,
    })
}

impl TrainedRun {
    pub fn decode_options(&self, beam_width: usize) -> DecodeOptions {
        DecodeOptions::new(self.book.max_code_len())
            .with_beam(beam_width)
            .with_end_of_code(self.book.end_of_code())
    }

    pub fn evaluate(&self, task: &SyntheticTask, beam_width: usize, constrained: bool) -> Result<(EvalReport, Vec<QueryResult>)> {
        if beam_width == 0 {
            return Err(Error::InvalidParameter("beam width must be at least 1".into()));
        }
        let decoder = ModelDecoder {
            model: &self.model,
            options: self.decode_options(beam_width),
            trie: constrained.then_some(&self.trie),
        };
        evaluate(&decoder, &eval_queries(task)?, &self.trie)
    }
}

/// Builds codes, trains and evaluates unconstrained with `cfg.beam_width`.
pub fn run(task: &SyntheticTask, cfg: &TrainConfig, hkc: HkcSettings) -> Result<RunOutcome> {
    let trained = train_on_task(task, cfg, hkc)?;
    let (report, _) = trained.evaluate(task, cfg.beam_width, false)?;
    Ok(RunOutcome {
        scheme: cfg.scheme,
        code_length: cfg.code_length,
        max_code_len: trained.book.max_code_len(),
        fallback_fraction: trained.book.fallback_fraction(),
        train: trained.train,
        report,
    })
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
