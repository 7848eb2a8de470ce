//! `farspeech`: dataset synthesis, training, enhancement, evaluation and
//! spectrogram plotting.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "farspeech", version, about = "Multi-channel target-speaker enhancement and recognition workbench")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Root for every relative path.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Key-value configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Record deterministic mode in the resolved config. Gradient reduction
    /// always runs in batch order, so results do not depend on --threads.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a speaker-disjoint two-speaker reverberant dataset.
    SynthDataset(SynthArgs),
    /// Train one regime: base, sept-1, sept-2, am, joint or joint-frozen.
    Train(TrainArgs),
    /// Enhance every mixture of a split with a mask-network checkpoint.
    Enhance(EnhanceArgs),
    /// Score enhanced (or unprocessed) audio per SIR and angle bucket.
    Evaluate(EvaluateArgs),
    /// Render a log-magnitude spectrogram (or a target/mixture/enhanced panel) as PGM.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_valid: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Utterance length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Directory of per-speaker sub-directories of 16 kHz WAVs.
    #[arg(long)]
    pub source_corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub regime: Option<String>,
    /// Dataset root holding the split manifests.
    #[arg(long)]
    pub data: PathBuf,
    /// Warm-start checkpoint; for joint regimes, the enhancement checkpoint.
    #[arg(long)]
    pub init_ckpt: Option<PathBuf>,
    /// Acoustic model to fine-tune (joint regimes).
    #[arg(long)]
    pub am_ckpt: Option<PathBuf>,
    /// Enhancement model producing the `enhanced` condition (am regime).
    #[arg(long)]
    pub enh_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated subset of clean,reverb,mixture,enhanced.
    #[arg(long)]
    pub am_mix: Option<String>,
}

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Without it the unprocessed reference-channel mixture is scored.
    #[arg(long)]
    pub enh_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub am_ckpt: Option<PathBuf>,
    /// Also report symbol error rates (needs --am-ckpt).
    #[arg(long)]
    pub cer: bool,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long, conflicts_with_all = ["ckpt", "utt"])]
    pub wav: Option<PathBuf>,
    #[arg(long, requires = "utt")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub utt: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Dynamic range shown, in dB below the peak.
    #[arg(long, default_value_t = farspeech::plot::DEFAULT_RANGE_DB)]
    pub range_db: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
