//! `hashemb`: hash-based token embeddings from the command line.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 for data errors.

mod commands;
mod common;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::*;
use common::UsageError;

#[derive(Debug, Parser)]
#[command(name = "hashemb", version, about = "Vocabulary-free hash embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count character n-grams and write the top-cap vocabulary as TSV.
    BuildVocab(BuildVocabArgs),
    /// Hash tokens to bucket indices or bit strings.
    Hash(HashCmdArgs),
    /// Embed tokens, one comma-separated vector per line.
    Embed(EmbedArgs),
    /// Apply shuffle/random corruption and print per-token labels.
    Corrupt(CorruptArgs),
    /// Train the toy encoder on the shuffle/random objective.
    TrainToy(TrainToyArgs),
    /// Count embedding parameters for a configuration.
    AuditParams(AuditArgs),
    /// Bucket histogram, uniformity test and family locality.
    Collisions(CollisionArgs),
    /// Efficiency ratios against a baseline.
    Metrics(MetricsArgs),
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::BuildVocab(a) => build_vocab(a),
        Command::Hash(a) => hash(a),
        Command::Embed(a) => embed(a),
        Command::Corrupt(a) => corrupt(a),
        Command::TrainToy(a) => train_toy_cmd(a),
        Command::AuditParams(a) => audit_params(a),
        Command::Collisions(a) => collisions(a),
        Command::Metrics(a) => metrics(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
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
