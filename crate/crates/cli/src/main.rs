use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod run;

/// Minimum-correct / minimum-incorrect filter explanations for a frozen
/// classifier head.
#[derive(Debug, Parser)]
#[command(name = "cfx", version, about)]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic train/test bundle and fit a classifier head on it.
    GenSynth(GenSynthArgs),
    /// Fit a softmax classifier head on a bundle's true labels.
    TrainHead(TrainHeadArgs),
    /// Train an MC head for one class.
    TrainMc(TrainMcArgs),
    /// Train an MI head toward one alter class.
    TrainMi(TrainMiArgs),
    /// Explain one image with a trained checkpoint.
    Explain(ExplainArgs),
    /// Per-filter activation counts of an MC head over one class.
    Stats(StatsArgs),
    /// Disable a class's global MC filter set and measure recall.
    Ablate(AblateArgs),
    /// Train MC heads over several lambdas.
    Sweep(SweepArgs),
    /// Train MC heads with and without the logits term.
    LogitsAblate(LogitsAblateArgs),
    /// Explain a misclassified image with an MC and an MI checkpoint.
    Misclass(MisclassArgs),
    /// Compare analytic and finite-difference gradients on random problems.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LogitsMode {
    Signed,
    Absolute,
    Disabled,
}

/// Optimizer and objective settings. Unset flags keep the command's default.
#[derive(Debug, Args, Default)]
struct TrainArgs {
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Sparsity weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// MC score threshold.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    logits: Option<LogitsMode>,
    /// Initial explainer bias.
    #[arg(long, allow_hyphen_values = true)]
    init_bias: Option<f64>,
    /// Training images: inferred-equals-target, inferred-not-target, all or
    /// source:<class>.
    #[arg(long, value_parser = commands::parse_policy)]
    policy: Option<cfx_core::SubsetPolicy>,
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// Number of filters.
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 30)]
    test_per_class: usize,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Prototype filters per class.
    #[arg(long)]
    support: Option<usize>,
    /// Also synthesise spatial maps of size HxW.
    #[arg(long, value_parser = commands::parse_dims)]
    spatial: Option<(usize, usize)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainHeadArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Class count; defaults to the bundle's.
    #[arg(long)]
    classes: Option<usize>,
    /// Also write the bundle with inferred labels from the new head.
    #[arg(long)]
    relabel: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainMcArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    head: PathBuf,
    #[arg(long)]
    class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainMiArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    head: PathBuf,
    /// Class the additions should flip to.
    #[arg(long)]
    alter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    head: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image index in the bundle.
    #[arg(long)]
    image: usize,
    /// Alter class for MI checkpoints; defaults to the checkpoint's class.
    #[arg(long)]
    alter: Option<usize>,
    #[arg(long, default_value_t = cfx_core::explain::DEFAULT_TOP_K)]
    top_k: usize,
    /// Write a PGM heatmap of size HxW for each top filter.
    #[arg(long, value_parser = commands::parse_dims)]
    heatmap: Option<(usize, usize)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    head: PathBuf,
    /// MC checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Class to tally; defaults to the checkpoint's class.
    #[arg(long)]
    class: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Bundle the recall is measured on.
    #[arg(long)]
    bundle: PathBuf,
    /// Bundle the global MC set is collected from; defaults to --bundle.
    #[arg(long)]
    stats_bundle: Option<PathBuf>,
    #[arg(long)]
    head: PathBuf,
    /// MC checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    class: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Seed for the random baseline set.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    test_bundle: Option<PathBuf>,
    #[arg(long)]
    head: PathBuf,
    #[arg(long)]
    class: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    lambdas: Vec<f64>,
    /// Rows trained in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LogitsAblateArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    test_bundle: Option<PathBuf>,
    #[arg(long)]
    head: PathBuf,
    #[arg(long)]
    class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MisclassArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    head: PathBuf,
    /// MC checkpoint for the inferred class.
    #[arg(long)]
    mc: PathBuf,
    /// MI checkpoint toward the true class.
    #[arg(long)]
    mi: PathBuf,
    #[arg(long)]
    image: usize,
    #[arg(long, default_value_t = 3)]
    images_per_filter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Problems are drawn for seeds 0..seeds.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    /// Parameters of units this close to their kink are skipped.
    #[arg(long, default_value_t = 1e-3)]
    band: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
