//! `ucbm`: concept discovery, gated concept-bottleneck training, explanation
//! and weight editing over precomputed activation matrices.

mod commands;
mod config;
mod manifest;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use ucbm_core::analysis::SweepParam;
use ucbm_core::discovery::{DiscoveryMethod, NegativePolicy};
use ucbm_core::projection::ProjectionMode;
use ucbm_core::tensor_io::{MatrixFormat, SplitPart};

use crate::config::{ConfigKeyError, FileConfig};
use crate::manifest::Run;

#[derive(Parser, Debug)]
#[command(name = "ucbm", version, about, propagate_version = true)]
struct Cli {
    /// Seed for every random stream (default 0, or `seed` in the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. All computation is currently single-threaded, so
    /// values other than 1 only change what the manifest records.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; receives every artifact and `manifest.json`.
    #[arg(long, global = true, default_value = "ucbm-out")]
    out: PathBuf,
    /// TOML file with defaults (`seed`, `threads`, `[discover]`, `[project]`, `[train]`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a concept dictionary from an activation matrix.
    Discover(DiscoverArgs),
    /// Project activations onto a concept dictionary.
    Project(ProjectArgs),
    /// Train an interpretable head on frozen concept similarities.
    Train(TrainArgs),
    /// Top-1 accuracy of a trained head.
    Eval(EvalArgs),
    /// Active concepts per input.
    Stats(StatsArgs),
    /// Per-concept contributions behind one prediction.
    Explain(ExplainArgs),
    /// Retrain over a grid of one hyperparameter.
    Sweep(SweepArgs),
    /// Propose, apply or line-search weight edits.
    #[command(subcommand)]
    Edit(EditCommand),
    /// Run the bundled synthetic pipeline end to end.
    Selftest,
    /// Write the seeded synthetic dataset.
    #[command(hide = true)]
    GenSynthetic,
}

#[derive(Args, Debug)]
struct MatrixInput {
    /// Activation matrix (.npy, .csv or raw f64 with a `<file>.json` descriptor).
    #[arg(long)]
    acts: PathBuf,
    /// Overrides the format inferred from the file extension.
    #[arg(long)]
    format: Option<MatrixFormat>,
}

#[derive(Args, Debug)]
struct DiscoverArgs {
    #[command(flatten)]
    input: MatrixInput,
    /// Number of concepts.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    method: Option<DiscoveryMethod>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// What NMF does with negative activations: reject or clamp.
    #[arg(long)]
    negative_policy: Option<NegativePolicy>,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[command(flatten)]
    input: MatrixInput,
    /// Dictionary or checkpoint directory.
    #[arg(long)]
    dict: PathBuf,
    /// cosine or dot_unit_concept.
    #[arg(long)]
    mode: Option<ProjectionMode>,
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long)]
    lambda_w: Option<f64>,
    /// Gate-output penalty; averaged over the batch, so it does not scale with batch size.
    #[arg(long)]
    lambda_pi: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Train a plain sparse linear head without the concept gate.
    #[arg(long)]
    no_gate: bool,
    /// Use the unsquared Frobenius norm in the elastic net.
    #[arg(long)]
    unsquared_frobenius: bool,
}

#[derive(Args, Debug)]
struct Supervision {
    /// Concept similarities (output of `project`).
    #[arg(long)]
    proj: PathBuf,
    /// One-column CSV of class indices.
    #[arg(long)]
    labels: PathBuf,
    /// JSON with `train`, `val` and `test` index lists.
    #[arg(long)]
    split: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: Supervision,
    /// Dictionary the similarities were computed with; stored in the checkpoint.
    #[arg(long)]
    dict: PathBuf,
    /// Similarity mode used to produce `--proj`.
    #[arg(long)]
    mode: Option<ProjectionMode>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    proj: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Restrict to one part of this split.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value = "test", requires = "split")]
    part: SplitPart,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    proj: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value = "test", requires = "split")]
    part: SplitPart,
    #[arg(long, default_value_t = ucbm_core::analysis::ACTIVE_THRESHOLD)]
    threshold: f64,
    /// Drop the gate-output condition from the active-concept rule.
    #[arg(long)]
    ignore_gate: bool,
    /// Drop the similarity condition.
    #[arg(long)]
    ignore_similarity: bool,
    /// Drop the weight-column condition.
    #[arg(long)]
    ignore_weight: bool,
}

#[derive(Args, Debug)]
struct Target {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    proj: PathBuf,
    /// Row index of the sample.
    #[arg(long)]
    sample: usize,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[command(flatten)]
    target: Target,
    /// Adds the true class to the report.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    top: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: Supervision,
    /// lambda_w, lambda_pi or dropout.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated grid.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    mode: Option<ProjectionMode>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Subcommand, Debug)]
enum EditCommand {
    /// Build the correction prompt for a misclassified sample and optionally
    /// obtain a proposal for it.
    Propose(ProposeArgs),
    /// Apply a proposal scaled by β.
    Apply(ApplyArgs),
    /// Search β on a grid for the weakest edit that fixes the sample.
    Linesearch(LinesearchArgs),
}

#[derive(Args, Debug)]
struct ProposeArgs {
    #[command(flatten)]
    target: Target,
    #[arg(long)]
    labels: PathBuf,
    /// One class name per line.
    #[arg(long)]
    class_names: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Chat-completions base URL (falls back to UCBM_ENDPOINT_URL).
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the endpoint (falls back to UCBM_MODEL).
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "UCBM_API_KEY")]
    api_key_env: String,
    /// Offline: read the proposal from this JSON file instead.
    #[arg(long, conflicts_with = "endpoint")]
    proposal: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ApplyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    proposal: PathBuf,
    #[arg(long)]
    beta: f64,
}

#[derive(Args, Debug)]
struct LinesearchArgs {
    #[command(flatten)]
    target: Target,
    #[arg(long)]
    proposal: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Samples checked for collateral damage: train, val, test or all.
    #[arg(long, default_value = "val")]
    search_set: String,
    /// Required unless `--search-set all`.
    #[arg(long)]
    split: Option<PathBuf>,
}

/// Problems with how the tool was invoked; exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Resolved global options shared by every subcommand.
pub struct Context {
    pub file: FileConfig,
    /// Seed from `--seed` or the config file, if either was given.
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let filter = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(filter)),
        )
        .init();

    let name = subcommand_name(&cli.command);
    let mut run = Run::new(cli.out.clone(), name, cli.seed.unwrap_or(0), cli.threads.unwrap_or(1));
    let outcome = setup(&cli).and_then(|ctx| {
        run.seed = ctx.seed.unwrap_or(0);
        run.threads = cli.threads.or(ctx.file.threads).unwrap_or(1);
        if run.threads == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        dispatch(&cli.command, &ctx, &mut run)
    });

    match outcome {
        Ok(()) => match run.finish(None) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => report(&e),
        },
        Err(e) => {
            let code = report(&e);
            if e.downcast_ref::<UsageError>().is_none() {
                let _ = run.finish(Some(json!({"error": error_kind(&e), "message": format!("{e:#}")})));
            }
            code
        }
    }
}

fn setup(cli: &Cli) -> anyhow::Result<Context> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    Ok(Context {
        seed: cli.seed.or(file.seed),
        file,
    })
}

fn dispatch(command: &Command, ctx: &Context, run: &mut Run) -> anyhow::Result<()> {
    match command {
        Command::Discover(a) => commands::discover(a, ctx, run),
        Command::Project(a) => commands::project(a, ctx, run),
        Command::Train(a) => commands::train(a, ctx, run),
        Command::Eval(a) => commands::eval(a, run),
        Command::Stats(a) => commands::stats(a, run),
        Command::Explain(a) => commands::explain(a, run),
        Command::Sweep(a) => commands::sweep(a, ctx, run),
        Command::Edit(EditCommand::Propose(a)) => commands::propose(a, run),
        Command::Edit(EditCommand::Apply(a)) => commands::apply(a, run),
        Command::Edit(EditCommand::Linesearch(a)) => commands::linesearch(a, run),
        Command::Selftest => selftest::run(ctx, run),
        Command::GenSynthetic => selftest::gen_synthetic(ctx, run),
    }
}

fn subcommand_name(command: &Command) -> &'static str {
    match command {
        Command::Discover(_) => "discover",
        Command::Project(_) => "project",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Stats(_) => "stats",
        Command::Explain(_) => "explain",
        Command::Sweep(_) => "sweep",
        Command::Edit(EditCommand::Propose(_)) => "edit propose",
        Command::Edit(EditCommand::Apply(_)) => "edit apply",
        Command::Edit(EditCommand::Linesearch(_)) => "edit linesearch",
        Command::Selftest => "selftest",
        Command::GenSynthetic => "gen-synthetic",
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<ucbm_core::Error>() {
            return core.kind();
        }
        if cause.is::<ConfigKeyError>() || cause.is::<toml::de::Error>() || cause.is::<serde_json::Error>() {
            return "InvalidConfig";
        }
        if cause.is::<std::io::Error>() {
            return "IoError";
        }
        if cause.is::<selftest::SelftestFailure>() {
            return "SelftestFailed";
        }
    }
    "Error"
}

fn report(e: &anyhow::Error) -> ExitCode {
    if let Some(usage) = e.downcast_ref::<UsageError>() {
        eprintln!("error: {usage}\n\nFor more information, try '--help'.");
        return ExitCode::from(2);
    }
    eprintln!("{}", json!({"error": error_kind(e), "message": format!("{e:#}")}));
    ExitCode::from(1)
}
