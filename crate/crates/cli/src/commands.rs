use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ald::codebook::{
    ablation_select, build_atomic_codes, build_caption_codes, build_frequency_table, load_entities, AldOptions,
    CodeBook, Scheme, TokenOrder, TokenSelection,
};
use ald::codetrie::CodeTrie;
use ald::dataset::{assign_unique, evictions_to_tsv, items_from_matrix, leakage_filter, pairs_to_jsonl, topk_retrieve};
use ald::embedding::{ids_path_for, EmbeddingMatrix};
use ald::eval::{evaluate, results_to_tsv, ModelDecoder};
use ald::experiment::{eval_queries, median, run, task_codebook, train_on_task, HkcSettings};
use ald::hkc::build_hkc_codes;
use ald::tinyger::{beam_decode, checkpoint, greedy_decode, make_synthetic_task, DecodeOptions, TaskConfig, TrainConfig};
use ald::tokenizer::{load_vocabulary, Vocabulary};
use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::meta::{require_file, Run};
use crate::Common;

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    require_file(path)?;
    load_vocabulary(path).with_context(|| format!("loading vocabulary {}", path.display()))
}

fn load_matrix(path: &Path) -> Result<EmbeddingMatrix> {
    require_file(path)?;
    let ids = ids_path_for(path);
    require_file(&ids)?;
    EmbeddingMatrix::load(path, &ids).with_context(|| format!("loading embeddings {}", path.display()))
}

fn record_matrix(run: &mut Run, path: &Path) -> Result<()> {
    run.input(path)?;
    run.input(&ids_path_for(path))
}

#[derive(Args, Serialize)]
pub struct FreqArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// `entity_id<TAB>name` file.
    #[arg(long)]
    entities: PathBuf,
    /// One token per line; the value of a token is its 1-based line number.
    #[arg(long)]
    vocab: PathBuf,
}

pub fn freq(a: FreqArgs) -> Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    require_file(&a.entities)?;
    let mut run = Run::new("freq", &a.common.out, a.common.seed, &a)?;
    run.input(&a.entities)?;
    run.input(&a.vocab)?;
    let entities = load_entities(&a.entities)?;
    let table = build_frequency_table(&vocab, &entities)?;
    run.output("freq.tsv", table.to_tsv(&vocab).as_bytes())?;
    run.finish()
}

#[derive(Args, Serialize)]
pub struct BuildCodesArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    entities: PathBuf,
    /// Required for ald and caption.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Entity-name embeddings for hkc, with a `.ids` sidecar.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value = "ald")]
    scheme: String,
    /// Code length `L` for ald and atomic.
    #[arg(long, default_value_t = 4)]
    length: usize,
    /// Code alphabet size for atomic codes; defaults to the vocabulary size.
    #[arg(long)]
    vocab_size: Option<u32>,
    /// Branching factor for hkc.
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    max_depth: usize,
    /// Caption codes keep only this many name tokens.
    #[arg(long)]
    truncate: Option<usize>,
    #[arg(long, default_value = "least_frequent")]
    selection: String,
    #[arg(long, default_value = "least_first")]
    order: String,
}

#[derive(Serialize)]
struct CodeStats {
    scheme: Scheme,
    n_entities: usize,
    fallback_fraction: f64,
    disambiguation_histogram: std::collections::BTreeMap<u32, usize>,
    code_length: usize,
    max_code_len: usize,
    vocab_size: u32,
    bytes_written: usize,
}

pub fn build_codes(a: BuildCodesArgs) -> Result<()> {
    let scheme: Scheme = a.scheme.parse()?;
    let selection: TokenSelection = a.selection.parse()?;
    let order: TokenOrder = a.order.parse()?;
    require_file(&a.entities)?;
    let vocab = match (&a.vocab, scheme) {
        (Some(p), _) => Some(load_vocab(p)?),
        (None, Scheme::Ald | Scheme::Caption) => bail!("--vocab is required for the {scheme} scheme"),
        (None, _) => None,
    };
    let embeddings = match (&a.embeddings, scheme) {
        (Some(p), Scheme::Hkc) => Some(load_matrix(p)?),
        (None, Scheme::Hkc) => bail!("--embeddings is required for the hkc scheme"),
        _ => None,
    };

    let seed = a.common.seed;
    let mut run = Run::new("build-codes", &a.common.out, seed, &a)?;
    run.input(&a.entities)?;
    if let Some(p) = &a.vocab {
        run.input(p)?;
    }
    if let (Some(p), Scheme::Hkc) = (&a.embeddings, scheme) {
        record_matrix(&mut run, p)?;
    }
    let entities = load_entities(&a.entities)?;

    let book = match scheme {
        Scheme::Ald => {
            let opts = AldOptions::new(a.length, seed).with_strategy(selection, order);
            ablation_select(vocab.as_ref().unwrap(), &entities, opts)?
        }
        Scheme::Atomic => {
            let v = match (a.vocab_size, &vocab) {
                (Some(v), _) => v,
                (None, Some(vocab)) => vocab.size() as u32,
                (None, None) => bail!("atomic codes need --vocab-size or --vocab"),
            };
            build_atomic_codes(&entities, a.length, v, seed)?
        }
        Scheme::Caption => build_caption_codes(vocab.as_ref().unwrap(), &entities, a.truncate, seed)?,
        Scheme::Hkc => {
            let emb = embeddings.unwrap();
            check_same_ids(&entities.iter().map(|e| e.entity_id.clone()).collect::<Vec<_>>(), emb.ids())?;
            build_hkc_codes(&emb, a.k, a.max_depth, seed)?
        }
    };
    write_codes(&mut run, &book)?;
    run.finish()
}

fn check_same_ids(entities: &[String], embedded: &[String]) -> Result<()> {
    ensure!(
        entities.len() == embedded.len(),
        "{} entities but {} embedding rows",
        entities.len(),
        embedded.len()
    );
    if let Some((e, m)) = entities.iter().zip(embedded).find(|(e, m)| e != m) {
        bail!("entity {e} does not match embedding id {m}");
    }
    Ok(())
}

fn write_codes(run: &mut Run, book: &CodeBook) -> Result<()> {
    let bytes_written = run.output("codes.tsv", book.to_tsv().as_bytes())?;
    let stats = CodeStats {
        scheme: book.scheme(),
        n_entities: book.len(),
        fallback_fraction: book.fallback_fraction(),
        disambiguation_histogram: book.disambiguation_histogram(),
        code_length: book.params().length,
        max_code_len: book.max_code_len(),
        vocab_size: book.vocab_size(),
        bytes_written,
    };
    run.json_output("stats.json", &stats)?;
    Ok(())
}

#[derive(Args, Serialize)]
pub struct BuildDatasetArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Entity-name embeddings, with a `.ids` sidecar.
    #[arg(long)]
    embeddings: PathBuf,
    /// Candidate item caption embeddings.
    #[arg(long)]
    items: PathBuf,
    /// Evaluation item embeddings used for leakage filtering.
    #[arg(long)]
    eval_items: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = ald::dataset::DEFAULT_LEAKAGE_THRESHOLD)]
    dedup_threshold: f64,
}

#[derive(Serialize)]
struct DatasetStats {
    n_entities: usize,
    n_items: usize,
    n_eval_items: usize,
    assigned: usize,
    evicted: usize,
    kept: usize,
}

pub fn build_dataset(a: BuildDatasetArgs) -> Result<()> {
    let entities = load_matrix(&a.embeddings)?;
    let items = load_matrix(&a.items)?;
    let eval_items = load_matrix(&a.eval_items)?;
    let mut run = Run::new("build-dataset", &a.common.out, a.common.seed, &a)?;
    for p in [&a.embeddings, &a.items, &a.eval_items] {
        record_matrix(&mut run, p)?;
    }
    let items = items_from_matrix(&items, false);
    let eval_items = items_from_matrix(&eval_items, true);
    let retrievals = topk_retrieve(&entities, &items, a.k)?;
    let pairs = assign_unique(&retrievals);
    let report = leakage_filter(&pairs, &items, &eval_items, a.dedup_threshold)?;
    run.output("pairs.jsonl", pairs_to_jsonl(&report.kept).as_bytes())?;
    run.output("evictions.tsv", evictions_to_tsv(&report.evictions).as_bytes())?;
    run.json_output(
        "stats.json",
        &DatasetStats {
            n_entities: entities.len(),
            n_items: items.len(),
            n_eval_items: eval_items.len(),
            assigned: pairs.len(),
            evicted: report.evictions.len(),
            kept: report.kept.len(),
        },
    )?;
    run.finish()
}

/// Shape of the synthetic task; its seed is the command's `--seed`.
#[derive(Args, Clone, Serialize)]
pub struct TaskArgs {
    #[arg(long, default_value_t = 1000)]
    n_entities: usize,
    #[arg(long, default_value_t = 20)]
    n_families: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    #[arg(long, default_value_t = 20)]
    queries_per_entity: usize,
}

impl TaskArgs {
    fn config(&self, seed: u64) -> TaskConfig {
        TaskConfig::new(
            self.n_entities,
            self.n_families,
            self.dim,
            self.sigma,
            self.queries_per_entity,
            seed,
        )
    }
}

/// Training configuration from an optional file plus `--set key=value`
/// overrides, applied in order. `--seed` always wins.
#[derive(Args, Clone, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value_t = 16)]
    hkc_k: usize,
    #[arg(long, default_value_t = 4)]
    hkc_max_depth: usize,
}

impl TrainArgs {
    fn resolve(&self, seed: u64) -> Result<TrainConfig> {
        let mut text = match &self.config {
            Some(p) => {
                require_file(p)?;
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?
            }
            None => String::new(),
        };
        text.push('\n');
        for kv in &self.set {
            ensure!(kv.contains('='), "--set expects KEY=VALUE, got {kv:?}");
            text.push_str(kv);
            text.push('\n');
        }
        let src = self
            .config
            .as_ref()
            .map_or("--set".to_string(), |p| format!("{} + --set", p.display()));
        let mut cfg = TrainConfig::parse(&text, &src)?;
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn hkc(&self) -> HkcSettings {
        HkcSettings {
            k: self.hkc_k,
            max_depth: self.hkc_max_depth,
        }
    }
}

/// Everything needed to rebuild a toy run's task and codes.
#[derive(Serialize, Deserialize)]
struct ToyRun {
    task: TaskConfig,
    train: TrainConfig,
    hkc: HkcSettings,
}

const TOY_FILE: &str = "toy.json";
const MODEL_FILE: &str = "model.tger";

#[derive(Args, Serialize)]
pub struct TrainToyArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    train: TrainArgs,
}

pub fn train_toy(a: TrainToyArgs) -> Result<()> {
    let seed = a.common.seed;
    let cfg = a.train.resolve(seed)?;
    let toy = ToyRun {
        task: a.task.config(seed),
        train: cfg.clone(),
        hkc: a.train.hkc(),
    };
    let mut run = Run::new("train-toy", &a.common.out, seed, &toy)?;
    if let Some(p) = &a.train.config {
        run.input(p)?;
    }
    let task = make_synthetic_task(toy.task)?;
    let trained = train_on_task(&task, &cfg, toy.hkc)?;
    run.json_output(TOY_FILE, &toy)?;
    run.output("config.txt", cfg.to_string().as_bytes())?;
    run.output("codes.tsv", trained.book.to_tsv().as_bytes())?;
    run.output(MODEL_FILE, &checkpoint::to_bytes(&trained.model))?;
    run.json_output("train.json", &trained.train)?;
    run.finish()
}

struct LoadedRun {
    task: ald::tinyger::SyntheticTask,
    book: CodeBook,
    trie: CodeTrie,
    model: ald::tinyger::TinyGerModel,
}

fn load_run(run: &mut Run, dir: &Path) -> Result<LoadedRun> {
    let toy_path = dir.join(TOY_FILE);
    let model_path = dir.join(MODEL_FILE);
    run.input(&toy_path)?;
    run.input(&model_path)?;
    let toy: ToyRun = serde_json::from_slice(&fs::read(&toy_path)?)
        .with_context(|| format!("parsing {}", toy_path.display()))?;
    let task = make_synthetic_task(toy.task)?;
    let book = task_codebook(&task, toy.train.scheme, toy.train.code_length, toy.hkc, toy.train.seed)?;
    let trie = CodeTrie::build(&book)?;
    let model = checkpoint::load(&model_path).with_context(|| format!("loading {}", model_path.display()))?;
    ensure!(
        model.config.vocab_size == book.vocab_size() && model.config.d_query == task.config.dim,
        "{} does not match the task and codes described by {}",
        model_path.display(),
        toy_path.display()
    );
    Ok(LoadedRun { task, book, trie, model })
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Directory written by `train-toy`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 3)]
    beam: usize,
    /// Restrict decoding to valid codes.
    #[arg(long)]
    constrained: bool,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    ensure!(a.beam >= 1, "--beam must be at least 1");
    let mut run = Run::new("eval", &a.common.out, a.common.seed, &a)?;
    let loaded = load_run(&mut run, &a.run)?;
    let decoder = ModelDecoder {
        model: &loaded.model,
        options: DecodeOptions::new(loaded.book.max_code_len())
            .with_beam(a.beam)
            .with_end_of_code(loaded.book.end_of_code()),
        trie: a.constrained.then_some(&loaded.trie),
    };
    let (report, results) = evaluate(&decoder, &eval_queries(&loaded.task)?, &loaded.trie)?;
    run.json_output("report.json", &report)?;
    run.output("results.tsv", results_to_tsv(&results).as_bytes())?;
    println!(
        "seen {:.1} unseen {:.1} hm {:.1} valid {:.3}",
        report.seen_top1, report.unseen_top1, report.hm, report.valid_code_rate
    );
    run.finish()
}

#[derive(Args, Serialize)]
pub struct DecodeArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 3)]
    beam: usize,
    #[arg(long)]
    constrained: bool,
    /// Greedy argmax decoding instead of beam search.
    #[arg(long, conflicts_with_all = ["beam", "constrained"])]
    greedy: bool,
    /// Decode only the first N evaluation queries.
    #[arg(long)]
    limit: Option<usize>,
}

pub fn decode(a: DecodeArgs) -> Result<()> {
    ensure!(a.beam >= 1, "--beam must be at least 1");
    let mut run = Run::new("decode", &a.common.out, a.common.seed, &a)?;
    let loaded = load_run(&mut run, &a.run)?;
    let opts = DecodeOptions::new(loaded.book.max_code_len())
        .with_beam(a.beam)
        .with_end_of_code(loaded.book.end_of_code());
    let trie = a.constrained.then_some(&loaded.trie);
    let queries = eval_queries(&loaded.task)?;
    let n = a.limit.map_or(queries.len(), |l| l.min(queries.len()));

    let mut out = String::from("index\tsplit\tgold\trank\tcode\tlog_prob\tentity\n");
    for (i, q) in queries[..n].iter().enumerate() {
        let hyps = if a.greedy {
            vec![greedy_decode(&loaded.model, &q.query, opts.max_len, opts.end_of_code)?]
        } else {
            beam_decode(&loaded.model, &q.query, opts, trie)?
        };
        for (rank, h) in hyps.iter().enumerate() {
            let code: Vec<String> = h.code.iter().map(u32::to_string).collect();
            let _ = writeln!(
                out,
                "{i}\t{}\t{}\t{rank}\t{}\t{}\t{}",
                q.split.as_str(),
                q.entity_id,
                code.join(" "),
                h.log_prob,
                loaded.trie.resolve(&h.code).unwrap_or("-")
            );
        }
    }
    run.output("decode.tsv", out.as_bytes())?;
    run.finish()
}

#[derive(Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 6, 8])]
    lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = ["ald".to_string()])]
    schemes: Vec<String>,
    /// Seeds for task generation and training; `--seed` alone when omitted.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Serialize)]
struct SweepCell {
    scheme: Scheme,
    code_length: usize,
    seed: u64,
    max_code_len: usize,
    fallback_fraction: f64,
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
    seen_top1: f64,
    unseen_top1: f64,
    hm: f64,
    valid_code_rate: f64,
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let schemes = a
        .schemes
        .iter()
        .map(|s| s.parse::<Scheme>())
        .collect::<Result<Vec<_>, _>>()?;
    ensure!(!a.lengths.is_empty(), "--lengths is empty");
    let seeds = if a.seeds.is_empty() { vec![a.common.seed] } else { a.seeds.clone() };
    let mut run = Run::new("sweep", &a.common.out, a.common.seed, &a)?;
    if let Some(p) = &a.train.config {
        run.input(p)?;
    }

    let mut cells = Vec::new();
    for &seed in &seeds {
        let task = make_synthetic_task(a.task.config(seed))?;
        let base = a.train.resolve(seed)?;
        for &scheme in &schemes {
            for &length in &a.lengths {
                let cfg = TrainConfig {
                    scheme,
                    code_length: length,
                    ..base.clone()
                };
                let o = run_cell(&task, &cfg, a.train.hkc())?;
                eprintln!("{scheme} L={length} seed {seed}: hm {:.1}", o.hm);
                cells.push(SweepCell { seed, ..o });
            }
        }
    }

    let mut table = String::from("scheme\tL\tseeds\tmedian_seen\tmedian_unseen\tmedian_hm\tmedian_fallback\n");
    for &scheme in &schemes {
        for &length in &a.lengths {
            let row: Vec<&SweepCell> = cells
                .iter()
                .filter(|c| c.scheme == scheme && c.code_length == length)
                .collect();
            let m = |f: fn(&SweepCell) -> f64| median(&row.iter().map(|c| f(c)).collect::<Vec<_>>());
            let _ = writeln!(
                table,
                "{scheme}\t{length}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.4}",
                row.len(),
                m(|c| c.seen_top1),
                m(|c| c.unseen_top1),
                m(|c| c.hm),
                m(|c| c.fallback_fraction)
            );
        }
    }
    print!("{table}");
    run.output("sweep.tsv", table.as_bytes())?;
    run.json_output("sweep.json", &cells)?;
    run.finish()
}

fn run_cell(task: &ald::tinyger::SyntheticTask, cfg: &TrainConfig, hkc: HkcSettings) -> Result<SweepCell> {
    let o = run(task, cfg, hkc)?;
    Ok(SweepCell {
        scheme: o.scheme,
        code_length: o.code_length,
        seed: cfg.seed,
        max_code_len: o.max_code_len,
        fallback_fraction: o.fallback_fraction,
        initial_loss: o.train.initial_loss(),
        final_loss: o.train.final_loss(),
        seen_top1: o.report.seen_top1,
        unseen_top1: o.report.unseen_top1,
        hm: o.report.hm,
        valid_code_rate: o.report.valid_code_rate,
    })
}
