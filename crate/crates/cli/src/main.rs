//! `tsm`: generate synthetic video data, train temporal-shift classifiers,
//! ensemble their predictions and report accuracy.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "tsm",
    version,
    about = "Temporal shift action recognition on synthetic video"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset and its train/val/test manifests.
    GenData(GenDataArgs),
    /// Train one model (phase 1 with validation, or phase 2 on everything).
    Train(TrainArgs),
    /// Write class probabilities of a checkpoint for every clip of a manifest.
    Predict(PredictArgs),
    /// Fuse prediction files with fixed or searched weights.
    Ensemble(EnsembleArgs),
    /// Top-1/Top-5 accuracy of one prediction file.
    Eval(EvalArgs),
    /// Accuracy table over several prediction files.
    Report(ReportArgs),
    /// Finite-difference check of every backward pass.
    GradCheck(GradCheckArgs),
    /// Show the temporal shift on a small labelled tensor.
    ShiftDemo(ShiftDemoArgs),
    /// Run the whole pipeline from one config file.
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Output directory for clips and manifests.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    num_classes: usize,
    #[arg(long, default_value_t = 50)]
    clips_per_class: usize,
    #[arg(long, default_value_t = 10)]
    test_clips_per_class: usize,
    /// Fraction of the pool assigned to training.
    #[arg(long, default_value_t = 0.8)]
    train_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModalityArg {
    Rgb,
    Ir,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CapacityArg {
    Small,
    Large,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    phase: u8,
    #[arg(long, value_enum)]
    modality: ModalityArg,
    #[arg(long, value_enum, default_value = "small")]
    capacity: CapacityArg,
    /// Disable the temporal shift (per-frame 2-D CNN plus averaging).
    #[arg(long)]
    no_shift: bool,
    /// Initialize from an existing checkpoint instead of random weights.
    #[arg(long)]
    init_from: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    fold_div: usize,
    #[arg(long, default_value_t = 8)]
    segments: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 5)]
    num_classes: usize,
    /// Training manifest; repeat to train on the union.
    #[arg(long = "train", required = true)]
    train: Vec<PathBuf>,
    /// Validation manifest (phase 1 only).
    #[arg(long)]
    val: Option<PathBuf>,
    /// Directory for model.ckpt, log.csv and config.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Epochs of the selected phase.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_augment: bool,
    /// Record wall-clock seconds per epoch in the log.
    #[arg(long)]
    wall_time: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("mode").required(true).args(["weights", "search", "spec"])))]
struct EnsembleArgs {
    /// Member prediction files, in weight order.
    #[arg(long, value_delimiter = ',')]
    preds: Vec<PathBuf>,
    /// Fixed weights, one per member.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Search the weight grid on the clips of --labels.
    #[arg(long, requires = "labels")]
    search: bool,
    /// Apply an ensemble spec file instead of --preds.
    #[arg(long, conflicts_with = "preds")]
    spec: Option<PathBuf>,
    /// Manifest supplying ground-truth labels for the search.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    /// Fused prediction file.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the chosen ensemble spec.
    #[arg(long)]
    spec_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    preds: PathBuf,
    /// Manifest supplying ground-truth labels.
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Manifest supplying ground-truth labels.
    #[arg(long)]
    labels: PathBuf,
    /// `name=path` of a prediction file; repeat for each row.
    #[arg(long = "row", required = true)]
    rows: Vec<String>,
    /// Emit CSV instead of the aligned table.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ShiftDemoArgs {
    #[arg(long, default_value_t = 3)]
    segments: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    fold_div: usize,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// RunConfig JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "print_config")]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

/// A flag-level problem detected after parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn error_line(kind: &str, message: &str) -> String {
    let message = message.replace('\n', " ");
    serde_json::json!({ "error": kind, "message": message.trim() }).to_string()
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if err.downcast_ref::<UsageError>().is_some() {
        return "usage";
    }
    err.chain()
        .find_map(|e| e.downcast_ref::<tsm_core::Error>())
        .map_or("error", tsm_core::Error::kind)
}

/// Joins the error chain with ": ", skipping causes already quoted by the
/// message above them.
fn chain_message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                e.exit();
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            eprintln!(
                "{}",
                error_line("usage", first.trim_start_matches("error: "))
            );
            return ExitCode::from(2);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let kind = error_kind(&e);
            eprintln!("{}", error_line(kind, &chain_message(&e)));
            if kind == "usage" {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
