//! `pagar`: config-driven runner.
//!
//! Exit codes: 0 success, 1 verification or run failure, 2 config or usage error.

mod commands;
mod config;
mod env;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CmdResult, Context, Failure};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "pagar", version, about = "Protagonist-antagonist regret minimization runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// δ-sweep and ω-sweep on the seven-state example.
    Example1Sweep(Common),
    /// Train a protagonist on the configured environment.
    Train(Common),
    /// Run the randomized verification suites.
    Verify(Common),
    /// Solver-vs-brute-force regret gap on random benchmarks.
    RandomSuite(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "pagar-out")]
    out: PathBuf,
    /// Worker threads for sweep points and suites.
    #[arg(long)]
    workers: Option<usize>,
}

fn init_logging() -> Result<(), String> {
    let level = std::env::var("PAGAR_LOG_LEVEL").unwrap_or_else(|_| "error".into());
    let filter = match level.as_str() {
        "error" => log::LevelFilter::Error,
        "info" => log::LevelFilter::Info,
        "debug" => log::LevelFilter::Debug,
        other => return Err(format!("PAGAR_LOG_LEVEL must be error, info or debug, got {other:?}")),
    };
    env_logger::Builder::new().filter_level(filter).format_timestamp(None).init();
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let (name, common) = match &cli.command {
        Command::Example1Sweep(c) => ("example1-sweep", c),
        Command::Train(c) => ("train", c),
        Command::Verify(c) => ("verify", c),
        Command::RandomSuite(c) => ("random-suite", c),
    };
    let (mut cfg, base) = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::parse(&text)?, base)
        }
        None => (RunConfig::default(), PathBuf::new()),
    };
    if let Some(seed) = common.seed {
        cfg.set("seed", seed)?;
    }
    let workers = match common.workers {
        Some(0) => return Err(Failure::Config("--workers must be positive".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    log::info!("{name} with {workers} workers");
    let ctx = Context { cfg, base: &base, out: &common.out, pool };
    match cli.command {
        Command::Example1Sweep(_) => commands::example1_sweep(ctx),
        Command::Train(_) => commands::train(ctx),
        Command::Verify(_) => commands::verify(ctx),
        Command::RandomSuite(_) => commands::random_suite(ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_logging() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
