//! `hasa`: corpus preparation, model training, and evaluation for the
//! hearing-aid speech assessment pipeline.
//!
//! Exit codes: 0 on success, 1 for invalid inputs or configuration, 2 for
//! runtime failures.

mod commands;
mod config;
mod data;
mod rundir;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use hasa_core::error::{Error, Result};

use crate::config::{CommandKind, Overrides, ProviderKind, RunConfig};

#[derive(Parser)]
#[command(
    name = "hasa",
    version,
    about = "Hearing-aid speech assessment: prepare the five-condition corpus, \
             train and fine-tune the dual-task model, and evaluate predictions"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the run directory (or, for `report`, where to write tables).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the feature provider.
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderKind>,

    /// Override the target source: 'synthetic', 'synthetic:SEED', or
    /// 'imported:PATH'.
    #[arg(long, global = true, value_name = "SPEC")]
    targets: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize or ingest source pools and render the dataset for all
    /// three roles, with audiogram catalog and target scores.
    Prepare,
    /// Train an assessment model from scratch.
    Train,
    /// Continue training from a checkpoint under the configured fine-tune
    /// mode.
    Finetune,
    /// Score the held-out test set with a trained checkpoint.
    Eval,
    /// Run the zero/few/full-shot adaptation ladder from a source
    /// checkpoint.
    Transfer,
    /// Consolidate evaluation reports from finished runs into one table.
    Report {
        /// Run directories to compare.
        #[arg(required = true, value_name = "RUN_DIR")]
        runs: Vec<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not failures.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Command::Report { runs } = &cli.command {
        return commands::report::cmd_report(runs, cli.out.as_deref());
    }

    let kind = match cli.command {
        Command::Prepare => CommandKind::Prepare,
        Command::Train => CommandKind::Train,
        Command::Finetune => CommandKind::Finetune,
        Command::Eval => CommandKind::Eval,
        Command::Transfer => CommandKind::Transfer,
        Command::Report { .. } => unreachable!("handled above"),
    };
    let path = cli.config.ok_or_else(|| {
        Error::InvalidInput(format!("{} needs --config <FILE>", kind.as_str()))
    })?;
    let mut config = RunConfig::load(&path)?;
    config.resolve(&Overrides {
        seed: cli.seed,
        out: cli.out,
        provider: cli.provider,
        targets: cli.targets,
    })?;
    config.validate(kind)?;

    match kind {
        CommandKind::Prepare => commands::prepare::cmd_prepare(&config),
        CommandKind::Train => commands::training::cmd_train(&config),
        CommandKind::Finetune => commands::training::cmd_finetune(&config),
        CommandKind::Eval => commands::eval::cmd_eval(&config),
        CommandKind::Transfer => commands::transfer::cmd_transfer(&config),
    }
}

/// Classify an error: 1 when the inputs or configuration are wrong, 2 when
/// the computation or environment failed.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_)
        | Error::UnclassifiedAudiogram { .. }
        | Error::MalformedCatalog(_)
        | Error::SilentSignal { .. }
        | Error::SampleRateMismatch { .. }
        | Error::ZeroEnergyRir { .. }
        | Error::Capability { .. }
        | Error::DimensionMismatch(_)
        | Error::ScoreTable(_)
        | Error::MissingAssets(_)
        | Error::KeyMismatch(_)
        | Error::UndefinedCorrelation(_)
        | Error::WavFormat(_)
        | Error::Checkpoint(_) => 1,
        Error::EnhancementFailed { .. }
        | Error::NonFiniteActivation { .. }
        | Error::NanLoss { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => 2,
    }
}
