mod chart;
mod commands;
mod config;
mod error;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Context;
use config::RunConfig;
use error::CliError;
use workspace::Workspace;

#[derive(Parser)]
#[command(name = "braingnn", version, about = "Classify and interpret brain connectivity graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Workspace directory; overrides `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Decomposition rank; overrides `decompose.rank`.
    #[arg(long, global = true)]
    rank: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Restrict fold-level commands to one fold.
    #[arg(long, global = true)]
    fold: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Synthetic population with a planted community, plus ground truth.
    Generate,
    /// Subject-level cross-validation; model, Box-Cox fit and log per fold.
    Train,
    /// Test-split metrics of every trained fold.
    Eval,
    /// Non-negative CP of the training connectivity tensor and communities.
    Decompose,
    /// Community ECC report and node importance.
    Interpret,
    /// Attribute importance report and bar chart.
    Explain,
    /// Finite-difference check of the loss gradient.
    Gradcheck,
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
    }
    let mut problems = Vec::new();
    if cli.rank == Some(0) {
        problems.push("--rank must be positive".to_string());
    }
    if cli.jobs == Some(0) {
        problems.push("--jobs must be positive".to_string());
    }
    if let Some(k) = cli.fold {
        if k >= cfg.train.folds {
            problems.push(format!("--fold {k} out of range: {} folds", cfg.train.folds));
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Config(problems));
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(CliError::failed)?;
    }
    let ws = Workspace::new(cfg.paths.out.clone(), cfg.paths.dataset.clone());
    Ok(Context {
        cfg,
        ws,
        fold: cli.fold,
        rank: cli.rank,
    })
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = context(cli)?;
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Decompose => commands::decompose(&ctx),
        Command::Interpret => commands::interpret(&ctx),
        Command::Explain => commands::explain(&ctx),
        Command::Gradcheck => commands::gradcheck(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
