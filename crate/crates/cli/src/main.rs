//! `avel`: synthesize corpora, train and evaluate localizers, run
//! cross-modality localization, dump attention maps and validate artifacts.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or format error,
//! 4 numerical divergence.

mod commands;
mod settings;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use avel_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

use settings::Numbers;

#[derive(Parser, Debug)]
#[command(name = "avel", version, about = "Audio-visual event localization toolkit")]
struct Cli {
    /// TOML config file; keys are long flag names, optionally under a
    /// `[command]` table. Flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus directory (AVEF files plus manifest).
    Synth(SynthArgs),
    /// Train a localizer or a cross-modality distance model.
    Train(TrainArgs),
    /// Score a localizer checkpoint on a split subset.
    Eval(EvalArgs),
    /// Cross-modality localization with a distance-model checkpoint.
    Localize(LocalizeArgs),
    /// Write per-segment attention weights as CSV and PGM.
    Attmaps(AttmapsArgs),
    /// Decode and re-encode artifacts, reporting any that do not round-trip.
    Validate(ValidateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Localize(_) => "localize",
            Command::Attmaps(_) => "attmaps",
            Command::Validate(_) => "validate",
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub videos: Option<usize>,
    /// Event classes, not counting background.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Segments per video.
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub visual_channels: Option<usize>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub audio_dim: Option<usize>,
    /// Visual region cells per class carrying the class signal.
    #[arg(long)]
    pub event_cells: Option<usize>,
    /// Class separation in noise units; 0 makes labels independent of features.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub audio_info: Option<f64>,
    #[arg(long)]
    pub visual_info: Option<f64>,
    /// Inclusive event length range "lo,hi".
    #[arg(long, value_name = "LO,HI")]
    pub event_len: Option<Numbers<usize, 2>>,
    /// Add spatial audio maps "channels,regions,cells".
    #[arg(long, value_name = "C,K,CELLS")]
    pub audio_map: Option<Numbers<usize, 3>>,
    /// Gain of the per-segment latent shared by both modalities.
    #[arg(long)]
    pub sync: Option<f64>,
    #[arg(long)]
    pub sync_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for model.ckpt, split.json and reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// "localizer" or "avdln".
    #[arg(long)]
    pub model: Option<String>,
    /// Localizer variant: A, V, V-att, A+V, A+V-att, A', A'-att, A'+V,
    /// A'+V-co-att; a "W-" prefix selects weak supervision.
    #[arg(long)]
    pub variant: Option<String>,
    /// "supervised" or "weak".
    #[arg(long)]
    pub task: Option<String>,
    /// Fusion operator name.
    #[arg(long)]
    pub fusion: Option<String>,
    /// early, late or decision.
    #[arg(long)]
    pub placement: Option<String>,
    #[arg(long)]
    pub joint_dim: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Branch updated by mrn: audio or visual.
    #[arg(long)]
    pub mrn_branch: Option<String>,
    /// LSTM width, or hidden width of the distance model.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub att_dim: Option<usize>,
    #[arg(long)]
    pub att_hidden: Option<usize>,
    /// Embedding width of the distance model.
    #[arg(long)]
    pub embed: Option<usize>,
    /// Contrastive margin of the distance model.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Negative pairs per positive for the distance model.
    #[arg(long)]
    pub negatives: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Train, validation and test fractions.
    #[arg(long, value_name = "TRAIN,VAL,TEST")]
    pub split: Option<Numbers<f64, 3>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split file; defaults to split.json beside the checkpoint.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// train, val, test or all; defaults to val, or test when val is empty.
    #[arg(long)]
    pub subset: Option<String>,
    /// Loss to report; defaults to the task in report.json beside the checkpoint.
    #[arg(long)]
    pub task: Option<String>,
    /// Write per-video predictions as JSON lines.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Defaults to test, or all videos without a split file.
    #[arg(long)]
    pub subset: Option<String>,
    /// a2v or v2a.
    #[arg(long)]
    pub direction: Option<String>,
    /// Query length; defaults to each video's event length.
    #[arg(long)]
    pub length: Option<usize>,
    /// JSON-lines results file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttmapsArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated video ids; defaults to every video in the corpus.
    #[arg(long)]
    pub videos: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Corpus directories, AVEF files, checkpoints, reports, split files,
    /// localization results, attention CSV or PGM files.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence { .. } => 4,
        _ => 3,
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("AVEL_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("AVEL_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    init_threads()?;
    let cfg = settings::Settings::load(cli.config.as_deref(), cli.command.name())?;
    match &cli.command {
        Command::Synth(a) => commands::synth(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::Localize(a) => commands::localize(a, &cfg),
        Command::Attmaps(a) => commands::attmaps(a, &cfg),
        Command::Validate(a) => {
            cfg.finish()?;
            validate::run(&a.paths)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            let failed = summary.get("ok").and_then(|v| v.as_bool()) == Some(false);
            if failed {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
