mod commands;
mod meta;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ald", version, about = "Entity codes, retrieval datasets and toy generative recognition")]
struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Token frequency table of a tokenized entity corpus.
    Freq(commands::FreqArgs),
    /// Entity codes for one scheme, plus construction statistics.
    BuildCodes(commands::BuildCodesArgs),
    /// Entity-to-item pairs by embedding retrieval with leakage filtering.
    BuildDataset(commands::BuildDatasetArgs),
    /// Train the toy decoder on a synthetic task.
    TrainToy(commands::TrainToyArgs),
    /// Score a trained toy run on its seen and unseen queries.
    Eval(commands::EvalArgs),
    /// HM over a grid of schemes, code lengths and seeds.
    Sweep(commands::SweepArgs),
    /// Ranked hypotheses for the evaluation queries of a trained run.
    Decode(commands::DecodeArgs),
}

/// Flags shared by every command.
#[derive(Args, Clone)]
pub struct Common {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Freq(a) => commands::freq(a),
        Command::BuildCodes(a) => commands::build_codes(a),
        Command::BuildDataset(a) => commands::build_dataset(a),
        Command::TrainToy(a) => commands::train_toy(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Decode(a) => commands::decode(a),
    }
}
