//! `palmcli`: synthetic data, training, ROI extraction, evaluation and
//! gradient checks behind one binary.
//!
//! Exit codes are 0 on success, 1 for usage errors and 2 for runtime or
//! data errors. Every command that writes outputs also writes
//! `config.resolved.json` next to them.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use palmnet::nets::BackboneConfig;
use palmnet::pipeline::{Classifier, SplitKind};
use palmnet::train::Strategy;
use serde::Serialize;

mod commands;
mod table;

pub use table::{GridCell, StrategyGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const THREADS_ENV: &str = "PALMW_THREADS";
pub const RESOLVED_CONFIG: &str = "config.resolved.json";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(palmnet::Error),
}

impl From<palmnet::Error> for CliError {
    fn from(e: palmnet::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "palmcli", version, about = "Palmprint alignment and recognition experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic palm dataset.
    Synth(SynthArgs),
    /// Pretrain the landmark localizer on an annotated dataset.
    TrainLocalizer(TrainLocalizerArgs),
    /// Train a recognition network with one of the fine-tuning strategies.
    Train(TrainArgs),
    /// Write the ROI of every image, from ground truth or a localizer.
    ExtractRoi(ExtractRoiArgs),
    /// Score the probes of a split and write the evaluation report.
    Eval(EvalArgs),
    /// Strategy x classifier grid over several trained models.
    Report(ReportArgs),
    /// Finite-difference checks of every differentiable operation.
    Gradcheck(GradcheckArgs),
}

fn parse_widths(s: &str) -> Result<BackboneConfig, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [a, b, c] = parts.as_slice() else {
        return Err(format!("expected three comma-separated widths, got {s:?}"));
    };
    let mut widths = [0usize; 3];
    for (w, p) in widths.iter_mut().zip([a, b, c]) {
        *w = p.parse().map_err(|_| format!("bad width {p:?}"))?;
        if *w == 0 {
            return Err("widths must be positive".into());
        }
    }
    Ok(BackboneConfig { widths })
}

fn parse_classifier(s: &str) -> Result<Classifier, String> {
    s.parse().map_err(|e: palmnet::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: palmnet::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<SplitKind, String> {
    s.parse().map_err(|e: palmnet::Error| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Number of palms (two palms per subject).
    #[arg(long)]
    pub palms: usize,
    /// Mean images per palm, drawn as 1 + Binomial(7, p).
    #[arg(long, default_value_t = 2.9)]
    pub mean_samples: f64,
    /// Exactly this many images per palm instead.
    #[arg(long)]
    pub fixed_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 40)]
    pub min_side: usize,
    #[arg(long, default_value_t = 256)]
    pub max_side: usize,
    /// Write single-channel PGM images.
    #[arg(long)]
    pub grayscale: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainLocalizerArgs {
    /// Dataset directory or manifest CSV; every sample needs landmarks.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "16,32,64", value_parser = parse_widths)]
    pub widths: BackboneConfig,
    /// Epochs training only the regression head.
    #[arg(long, default_value_t = 10)]
    pub epochs_a: usize,
    /// Epochs training head and backbone together.
    #[arg(long, default_value_t = 15)]
    pub epochs_ab: usize,
    #[arg(long, default_value_t = palmnet::train::DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, default_value_t = 32)]
    pub micro_batch: usize,
    #[arg(long, default_value_t = palmnet::train::DEFAULT_LR)]
    pub lr: f64,
    /// Fraction of palms held out for the NME curve.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Randomly rotated segmented copies per image.
    #[arg(long, default_value_t = 3)]
    pub rotations: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Replay a resolved training config; other training flags are ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// S0, S0h, S0nct or S1..S5.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    /// The final recipe: S5 for 60 epochs with `at` from epoch 41.
    #[arg(long, conflicts_with_all = ["strategy", "epochs", "at_from", "no_ct"])]
    pub recipe: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Pretrained localizer weights, required by every strategy but S0h.
    #[arg(long)]
    pub localizer: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// FERnet widths.
    #[arg(long, default_value = "16,32,64", value_parser = parse_widths)]
    pub widths: BackboneConfig,
    #[arg(long, default_value_t = palmnet::train::DEFAULT_LR)]
    pub lr: f64,
    /// Learning rate of the localizer head when it is fine-tuned.
    #[arg(long, default_value_t = palmnet::train::DEFAULT_D_LR)]
    pub d_lr: f64,
    #[arg(long, default_value_t = palmnet::train::DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, default_value_t = palmnet::train::DEFAULT_MICRO_BATCH)]
    pub micro_batch: usize,
    /// Disable colour transfer augmentation.
    #[arg(long)]
    pub no_ct: bool,
    /// Enable affine augmentation from this epoch on.
    #[arg(long)]
    pub at_from: Option<usize>,
    /// Grayscale data: affine augmentation replaces colour transfer.
    #[arg(long)]
    pub grayscale: bool,
    #[arg(long, default_value = "internet", value_parser = parse_split)]
    pub split: SplitKind,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Training images per palm for the first-k split.
    #[arg(long, default_value_t = palmnet::pipeline::DEFAULT_FIRSTK)]
    pub firstk: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExtractRoiArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Predict landmarks with this model; ground truth is used otherwise.
    #[arg(long)]
    pub localizer: Option<PathBuf>,
    #[arg(long, default_value_t = 112)]
    pub side: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitArgs {
    /// Defaults to the split the model was trained on.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<SplitKind>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub firstk: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MatcherArgs {
    #[arg(long, default_value_t = palmnet::pipeline::DEFAULT_PLS_COMPONENTS)]
    pub pls_components: usize,
    #[arg(long, default_value_t = 200)]
    pub svm_epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub svm_lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub svm_reg: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value = "softmax", value_parser = parse_classifier)]
    pub classifier: Classifier,
    #[command(flatten)]
    pub matcher: MatcherArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Trained models, one grid row each.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "softmax,pls,svm,knn",
        value_parser = parse_classifier
    )]
    pub classifiers: Vec<Classifier>,
    #[command(flatten)]
    pub matcher: MatcherArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradcheckArgs {
    /// Random instances per operation.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the table as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Validated `PALMW_THREADS`. Work runs on one thread either way; the value
/// is a cap and is recorded in every resolved config.
pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Usage(format!("{THREADS_ENV}: {e}"))),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// Accepts a dataset directory or its manifest file.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    if dataset.is_dir() {
        dataset.join("manifest.csv")
    } else {
        dataset.to_path_buf()
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    let threads = thread_cap()?;
    match command {
        Command::Synth(a) => commands::synth(&a, threads),
        Command::TrainLocalizer(a) => commands::train_localizer(&a, threads),
        Command::Train(a) => commands::train(&a, threads),
        Command::ExtractRoi(a) => commands::extract_roi(&a, threads),
        Command::Eval(a) => commands::eval(&a, threads),
        Command::Report(a) => commands::report(&a, threads),
        Command::Gradcheck(a) => commands::gradcheck(&a, threads),
    }
}
