use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use synthvsr::config::{RunConfig, KEYS};
use synthvsr::pipeline::{run, Stage};

#[derive(Clone, Copy, ValueEnum)]
enum Command {
    Preprocess,
    TrainVocab,
    TrainLam,
    GenSynth,
    TrainVsr,
    Decode,
    Eval,
    Mismatch,
    Report,
}

/// Lip animation and synthetic-data lip reading pipeline.
///
/// Every configuration key can be given as `--key value` after the command;
/// `--list-keys` prints them all.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum, required_unless_present = "list_keys")]
    command: Option<Command>,
    /// TOML file with configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print every configuration key with its default and exit.
    #[arg(long)]
    list_keys: bool,
    /// Configuration overrides as `--key value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.list_keys {
        for (k, d, doc) in KEYS {
            println!("{k:<28} {:<12} {doc}", d.unwrap_or("(required)"));
        }
        return ExitCode::SUCCESS;
    }
    let stage = match cli.command.expect("required by clap") {
        Command::Preprocess => Stage::Preprocess,
        Command::TrainVocab => Stage::TrainVocab,
        Command::TrainLam => Stage::TrainLam,
        Command::GenSynth => Stage::GenSynth,
        Command::TrainVsr => Stage::TrainVsr,
        Command::Decode => Stage::Decode,
        Command::Eval => Stage::Eval,
        Command::Mismatch => Stage::Mismatch,
        Command::Report => Stage::Report,
    };
    let result = RunConfig::load(cli.config.as_deref(), &cli.overrides).and_then(|cfg| run(stage, &cfg));
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
