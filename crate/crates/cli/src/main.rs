//! `spex`: simulate mixtures, train extraction networks, extract, evaluate.
//!
//! Settings come from built-in defaults, then an optional `--config` JSON
//! file, then command-line flags, each overriding the previous. On failure
//! the last line on stderr is a JSON object `{"error": <kind>, "message": …}`
//! and the exit code is 1.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spex_core::losses::LossKind;
use spex_core::net::{Mode, ScalePreset};

#[derive(Debug, Parser)]
#[command(name = "spex", version, about = "Target-speaker extraction with speaker-conditioned masks")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the command [default: config, else 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially [default: all cores].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build two-speaker mixtures with enrollment utterances from a corpus.
    Simulate(SimulateArgs),
    /// Train a network; writes checkpoints, optimizer state and a log.
    Train(TrainArgs),
    /// Apply a trained network to every record of a manifest.
    Extract(ExtractArgs),
    /// Score extracted waveforms against the references.
    Evaluate(EvaluateArgs),
    /// Run numerical self-checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Corpus root laid out as <root>/<speaker>/<utterance>.wav.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Speaker gender list [default: <corpus>/genders.txt].
    #[arg(long)]
    pub genders: Option<PathBuf>,
    /// Output directory for WAVs and manifest.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of mixtures [default: config, else 100].
    #[arg(long)]
    pub n: Option<usize>,
    /// Lowest SNR in dB [default: config, else 0].
    #[arg(long, allow_hyphen_values = true)]
    pub snr_lo: Option<f64>,
    /// Highest SNR in dB [default: config, else 5].
    #[arg(long, allow_hyphen_values = true)]
    pub snr_hi: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest.
    #[arg(long)]
    pub train: PathBuf,
    /// Development manifest (drives the schedule and checkpoint choice).
    #[arg(long)]
    pub dev: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Conditioning scheme [default: config, else concat].
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Size preset: desk or paper [default: config, else desk].
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<ScalePreset>,
    /// Objective: MAL, MSAL or MTSAL [default: config, else MTSAL].
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Initial learning rate [default: config, else 0.0005].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Minimum epochs before early stopping [default: config, else 30].
    #[arg(long)]
    pub min_epochs: Option<usize>,
    /// Maximum epochs [default: config, else 100].
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Minibatch size [default: config, else 16].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Continue from the state saved in --out.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Manifest whose mixtures to process.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint (e.g. <train-out>/best.json).
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory; one <record-id>.wav per record.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding <record-id>.wav extractions.
    #[arg(long)]
    pub extracted: PathBuf,
    /// Report path [default: <extracted>/report.json].
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_preset(s: &str) -> Result<ScalePreset, String> {
    match s {
        "desk" => Ok(ScalePreset::Desk),
        "paper" => Ok(ScalePreset::Paper),
        other => Err(format!("unknown preset {other:?} (desk or paper)")),
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<spex_core::Error>())
        .map_or("Error", spex_core::Error::kind)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({
                "error": error_kind(&err),
                "message": format!("{err:#}"),
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
