//! `attnrec` — train-and-evaluate pipeline driver.
//!
//! Subcommands cover the full flow: `synth` / `ingest` produce and index
//! interaction logs, `embed` trains item embeddings, `train` fits the
//! attention model or the DAN baseline, `tune-ws` calibrates the
//! weighted-sum baseline, `evaluate` runs the sampled-candidate ranking
//! protocol, `pipeline` chains everything, and `grad-check` verifies the
//! analytic gradients against finite differences.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod commands;
mod config;
mod manifest;

use clap::{Parser, Subcommand, ValueEnum};
use config::{RawConfig, RunConfig};
use manifest::RunLog;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Attn,
    Dan,
}

#[derive(Parser)]
#[command(
    name = "attnrec",
    version,
    about = "Attention-based collaborative filtering pipeline"
)]
struct Cli {
    /// Run configuration file (sectioned key=value).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration value (repeatable), e.g. --set attn.depth=4
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-cluster synthetic interaction log.
    Synth,
    /// Parse and filter an interaction log; write the vocabulary.
    Ingest,
    /// Train skip-gram item embeddings from the interaction log.
    Embed,
    /// Train a ranking model on temporally split instances.
    Train {
        #[arg(long, value_enum, default_value = "attn")]
        model: ModelArg,
    },
    /// Tune the weighted-sum baseline with CMA-ES against holdout NDCG.
    TuneWs,
    /// Rank sampled candidate pools with every configured model and emit
    /// the metrics report.
    Evaluate,
    /// Run the full pipeline: synth/ingest, embed, train, tune, evaluate.
    Pipeline,
    /// Check analytic gradients against central finite differences.
    GradCheck,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut raw = match &cli.config {
        Some(path) => RawConfig::parse_file(path)?,
        None => RawConfig::default(),
    };
    for spec in &cli.overrides {
        raw.apply_set(spec)?;
    }
    RunConfig::from_raw(raw)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    if config.threads > 1 {
        // One global pool; ignore the error if a test harness already built it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global();
    }
    let mut log = RunLog::open(&config.out_dir)?;
    match cli.command {
        Command::Synth => commands::cmd_synth(&config, &mut log),
        Command::Ingest => commands::cmd_ingest(&config, &mut log),
        Command::Embed => commands::cmd_embed(&config, &mut log),
        Command::Train { model } => {
            let model = match model {
                ModelArg::Attn => commands::TrainModel::Attn,
                ModelArg::Dan => commands::TrainModel::Dan,
            };
            commands::cmd_train(&config, &mut log, model)
        }
        Command::TuneWs => commands::cmd_tune_ws(&config, &mut log),
        Command::Evaluate => commands::cmd_evaluate(&config, &mut log),
        Command::Pipeline => commands::cmd_pipeline(&config, &mut log),
        Command::GradCheck => commands::cmd_grad_check(&config, &mut log),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {}", err.message());
        std::process::exit(err.exit_code());
    }
}
