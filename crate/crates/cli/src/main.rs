//! `nmtvocab`: alignment, dictionary, phrase, training, decoding and
//! benchmark stages over plain-text parallel corpora.

mod artifact;
mod commands;
mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Ctx, SynthArgs};
use config::{Overrides, PipelineConfig, UsageError};

#[derive(Parser, Debug)]
#[command(name = "nmtvocab", version, about = "Target vocabulary selection for attention NMT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct StageArgs {
    /// Flat `key = value` config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Accept upstream artifacts whose header hash does not match
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build vocabularies, train Model 1 both ways, write ttables and alignments
    Align(StageArgs),
    /// Distill the source-to-target ttable into a word dictionary
    Lexicon(StageArgs),
    /// Extract the phrase table from the alignments
    Phrases(StageArgs),
    /// Reference coverage and vocabulary sizes for each selection config
    Stats(StageArgs),
    /// Train the attention model over per-batch vocabularies
    Train(StageArgs),
    /// Beam-search translate `input`, scoring against `references` if set
    Decode(StageArgs),
    /// Output-layer and training throughput for each batch vocabulary size
    Bench(StageArgs),
    /// Write a synthetic parallel corpus with train/test splits
    Synth(SynthArgs),
}

fn context(args: &StageArgs) -> anyhow::Result<Ctx> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&args.overrides)?;
    Ok(Ctx {
        cfg,
        force: args.force,
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Align(a) => commands::align(&context(a)?),
        Command::Lexicon(a) => commands::lexicon(&context(a)?),
        Command::Phrases(a) => commands::phrases(&context(a)?),
        Command::Stats(a) => commands::stats(&context(a)?),
        Command::Train(a) => commands::train_cmd(&context(a)?),
        Command::Decode(a) => commands::decode(&context(a)?),
        Command::Bench(a) => commands::bench(&context(a)?),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
