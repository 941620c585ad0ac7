use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcmatch_cli::commands;
use dcmatch_cli::config::{FlagOverrides, Settings};
use dcmatch_core::trainer::TrainMode;

/// Divide-and-conquer sentence-pair matching pipeline.
#[derive(Parser)]
#[command(name = "dcmatch", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with gold keyword spans, a gazetteer,
    /// and a POS lexicon.
    Generate(CommonArgs),
    /// Add distant-supervision keyword spans to a dataset and report
    /// keyword statistics.
    Label(CommonArgs),
    /// Keyword statistics of an already-labeled dataset.
    Stats(CommonArgs),
    /// Train a matching model (baseline or dc_match mode) on a data
    /// directory with train/dev/test splits.
    Train(CommonArgs),
    /// Score a checkpoint on a labeled dataset.
    Evaluate(CommonArgs),
    /// Predict match classes for a dataset.
    Predict(CommonArgs),
    /// Per-example sub-problem breakdown and P-vs-Q consistency report.
    Analyze(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file (or directory with train/dev/test splits for `train`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Gazetteer file, one term per line.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// POS lexicon file, lines of word<TAB>TAG.
    #[arg(long)]
    pos_lexicon: Option<PathBuf>,
    /// Vocabulary file (JSON token-to-id map).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Model checkpoint file.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for generation, initialization, and training order.
    #[arg(long)]
    seed: Option<u64>,
    /// Training mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    Baseline,
    DcMatch,
}

impl From<&CommonArgs> for FlagOverrides {
    fn from(args: &CommonArgs) -> Self {
        FlagOverrides {
            config: args.config.clone(),
            data: args.data.clone(),
            gazetteer: args.gazetteer.clone(),
            pos_lexicon: args.pos_lexicon.clone(),
            vocab: args.vocab.clone(),
            checkpoint: args.checkpoint.clone(),
            out: args.out.clone(),
            seed: args.seed,
            mode: args.mode.map(|m| match m {
                ModeArg::Baseline => TrainMode::Baseline,
                ModeArg::DcMatch => TrainMode::DcMatch,
            }),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Version/help requests are not errors.
            if err.use_stderr() {
                let _ = err.print();
                return ExitCode::from(1);
            }
            let _ = err.print();
            return ExitCode::SUCCESS;
        }
    };
    let (args, run): (&CommonArgs, fn(&Settings) -> Result<(), dcmatch_cli::CliError>) =
        match &cli.command {
            Command::Generate(args) => (args, commands::cmd_generate),
            Command::Label(args) => (args, commands::cmd_label),
            Command::Stats(args) => (args, commands::cmd_stats),
            Command::Train(args) => (args, commands::cmd_train),
            Command::Evaluate(args) => (args, commands::cmd_evaluate),
            Command::Predict(args) => (args, commands::cmd_predict),
            Command::Analyze(args) => (args, commands::cmd_analyze),
        };
    let result = Settings::resolve(&FlagOverrides::from(args)).and_then(|settings| run(&settings));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
