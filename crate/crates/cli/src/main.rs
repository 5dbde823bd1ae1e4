//! `genseg`: stage-by-stage command line for the segmentation pipeline.

mod commands;
mod io;

use clap::{Args, Parser, Subcommand};
use io::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "genseg", version, about = "Fisher-vector HMM temporal segmentation toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for all randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Key=value config file with sections; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file for single-output commands (default: stdout for reports).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Read frame inputs as CSV instead of GSEQ1.
    #[arg(long, global = true)]
    pub convert: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a diagonal GMM codebook on frames pooled from the inputs.
    FitGmm(FitGmmArgs),
    /// Sliding-window Fisher-vector encoding of each input.
    Encode(EncodeArgs),
    /// Fit a PCA projection on rows pooled from the inputs.
    FitPca(FitPcaArgs),
    /// Project each input with a PCA model.
    Reduce(ReduceArgs),
    /// Per-dimension Lilliefors and Jarque-Bera pass fractions.
    Normality(NormalityArgs),
    /// Train one HMM per unit label from annotated sequences.
    TrainHmm(TrainHmmArgs),
    /// Build a path grammar or bigram model from annotations.
    BuildGrammar(BuildGrammarArgs),
    /// Decode each input into labeled spans.
    Decode(DecodeArgs),
    /// Pick the best-scoring activity for each input.
    Classify(ClassifyArgs),
    /// Score predicted segmentations against annotations.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic annotated dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct FitGmmArgs {
    /// Mixture components.
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Frames sampled from the inputs for fitting.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub gmm: PathBuf,
    /// Window length in frames.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitPcaArgs {
    /// Output dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub no_whiten: bool,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReduceArgs {
    #[arg(long)]
    pub pca: PathBuf,
    /// Skip the per-sequence, per-dimension L2 normalization after projection.
    #[arg(long)]
    pub no_clip_norm: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NormalityArgs {
    /// Comma-separated significance levels.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub samples_per_dim: Option<usize>,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainHmmArgs {
    /// Directory holding `<stem>.ann` files (default: next to each input).
    #[arg(long)]
    pub ann_dir: Option<PathBuf>,
    #[arg(long)]
    pub divisor: Option<usize>,
    #[arg(long)]
    pub mixtures: Option<usize>,
    #[arg(long)]
    pub min_samples: Option<usize>,
    #[arg(long)]
    pub max_samples: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildGrammarArgs {
    /// `path` or `bigram`.
    #[arg(long)]
    pub kind: Option<String>,
    /// Add-k smoothing for bigrams.
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(required = true)]
    pub annotations: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub hmms: PathBuf,
    #[arg(long)]
    pub grammar: PathBuf,
    /// Log-score cost per decoded unit.
    #[arg(long)]
    pub penalty: Option<f64>,
    #[arg(long)]
    pub beam: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// Unit HMMs shared by activities that do not name their own.
    #[arg(long)]
    pub hmms: Option<PathBuf>,
    /// `NAME=GRAMMAR[,HMMS]`, repeated per activity.
    #[arg(long = "activity", required = true)]
    pub activities: Vec<String>,
    /// Optional `<stem> <activity>` lines for computing accuracy.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub penalty: Option<f64>,
    #[arg(long)]
    pub beam: Option<f64>,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of ground-truth `<stem>.ann` files.
    #[arg(long)]
    pub truth_dir: PathBuf,
    /// Also write the frame confusion matrix here.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Leave this label out of all metrics.
    #[arg(long)]
    pub exclude: Option<String>,
    /// Predicted segmentations.
    #[arg(required = true)]
    pub predictions: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Dataset description (default: the built-in demo).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub sequences: Option<usize>,
    /// Print the demo description and exit.
    #[arg(long)]
    pub print_demo: bool,
    #[arg(long, required_unless_present = "print_demo")]
    pub out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("genseg: {e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}
