mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "diffpop", version, about = "Classifier-guided diffusion for object placement")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed. Falls back to the config file, then DIFFPOP_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world: scenes, objects and all three record sets.
    GenData(GenData),
    /// Train the unguided placement model.
    TrainDiffusion(TrainDiffusion),
    /// Train the structural plausibility classifier.
    TrainCs(TrainCs),
    /// Train the relational (pairwise) classifier.
    TrainCr(TrainCr),
    /// Draw placements, optionally classifier-guided.
    Sample(Sample),
    /// Append sampled placements to a corpus as unlabeled records.
    ImportSamples(ImportSamples),
    /// Score a sample file: accuracy, Fréchet distance, diversity.
    Evaluate(Evaluate),
    /// Sweep the guidance scale and write one metrics row per value.
    AblateLambda(AblateLambda),
    /// Run the labeling service.
    Serve(Serve),
}

#[derive(Debug, Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    objects: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainDiffusion {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Variant {
    Layout,
    Descriptor,
}

#[derive(Debug, Args)]
struct ClassifierFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainCs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "layout")]
    variant: Variant,
    /// Pooling grid for the layout variant.
    #[arg(long, default_value_t = diffpop::classifier::DEFAULT_GRID)]
    grid: usize,
    #[command(flatten)]
    train: ClassifierFlags,
}

#[derive(Debug, Args)]
struct TrainCr {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: ClassifierFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
struct Sample {
    #[arg(long)]
    diffusion: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Structural classifier; required when --lambda > 0.
    #[arg(long)]
    cs: Option<PathBuf>,
    /// Relational classifier; required when --lambda-r > 0.
    #[arg(long)]
    cr: Option<PathBuf>,
    /// Scene ids (repeatable). Defaults to every scene of --split.
    #[arg(long = "scene")]
    scenes: Vec<String>,
    /// Object ids (repeatable). Defaults to every object.
    #[arg(long = "object")]
    objects_ids: Vec<String>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "lambda-r")]
    lambda_r: Option<f64>,
    /// Objects placed jointly in each scene.
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ImportSamples {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Judge {
    Oracle,
    Cs,
}

#[derive(Debug, Args)]
struct Evaluate {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    judge: Judge,
    /// Structural classifier; required for --judge cs and reported alongside the oracle when given.
    #[arg(long)]
    cs: Option<PathBuf>,
    #[arg(long)]
    reference_per_task: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateLambda {
    #[arg(long)]
    diffusion: PathBuf,
    #[arg(long)]
    cs: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated guidance scales.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    per_task: Option<usize>,
    #[arg(long)]
    tasks: Option<usize>,
    /// CSV output; the same rows are also written as JSON next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Serve {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = label_service::DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory of frontend assets served at /.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
