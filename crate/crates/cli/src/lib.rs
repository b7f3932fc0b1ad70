//! Command-line front end: configuration loading, subcommands and reports.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "glam", version, about = "Sparsely activated mixture-of-experts LM toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration value by dotted path, e.g. `train.total_steps=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Root seed; overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train a model on `data.train_path` and write a checkpoint.
    Train,
    /// Score a checkpoint on the tasks in `eval.tasks`.
    Eval,
    /// Quality-filter documents with a classifier and Pareto sampling.
    DataFilter,
    /// Sample documents from `data.input_path` by mixture weight.
    DataMix,
    /// Count evaluation examples sharing n-grams with the training corpus.
    Contamination,
    /// Plan expert and activation sharding over a device mesh.
    ShardPlan,
    /// Parameter and FLOP counts of the configured model.
    Params,
    /// Training energy and emissions estimate.
    Energy,
}

pub fn execute(cli: &Cli) -> CliResult<String> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set, cli.seed, cli.out.as_deref())?;
    match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::DataFilter => commands::data_filter(&cfg),
        Command::DataMix => commands::data_mix(&cfg),
        Command::Contamination => commands::contamination(&cfg),
        Command::ShardPlan => commands::shard_plan(&cfg),
        Command::Params => commands::params(&cfg),
        Command::Energy => commands::energy(&cfg),
    }
}
