//! `turbest`: dataset generation, training, evaluation, identification and
//! simulation from one TOML configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use commands::Run;
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "turbest", version, about = "Ground-effect turbulence estimation from depth images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to $THREADS, else all cores for gen/eval
    /// and 1 for training.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate worlds and flight trajectories.
    Gen(Common),
    /// Pretrain the depth-to-normals transcoder.
    Pretrain(Common),
    /// Train the height estimator.
    Train(Common),
    /// Evaluate a predictor on a dataset split and write metrics.csv.
    Eval(Common),
    /// Identify vehicle and ground-effect parameters from a flight log.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Flight log: a CSV file or a dataset trajectory directory.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fly one trajectory and export d, d̂, f_a, f̂_a per frame.
    Simulate(Common),
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn resolve(common: &Common) -> Result<RunConfig, anyhow::Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn threads(common: &Common, parallel_default: bool) -> Result<usize, anyhow::Error> {
    if let Some(n) = common.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        return Ok(n);
    }
    if let Ok(v) = std::env::var("THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("THREADS={v:?} is not a positive integer"))?;
        anyhow::ensure!(n > 0, "THREADS must be positive");
        return Ok(n);
    }
    Ok(if parallel_default {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        1
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (name, common, log) = match &cli.command {
        Command::Gen(c) => ("gen", c, None),
        Command::Pretrain(c) => ("pretrain", c, None),
        Command::Train(c) => ("train", c, None),
        Command::Eval(c) => ("eval", c, None),
        Command::Identify { common, log } => ("identify", common, log.as_deref()),
        Command::Simulate(c) => ("simulate", c, None),
    };
    let config = resolve(common).map_err(Failure::Usage)?;
    let n_threads = threads(common, matches!(name, "gen" | "eval" | "simulate")).map_err(Failure::Usage)?;
    // a second initialization only happens in-process and is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n_threads).build_global();

    let rt = Failure::Runtime;
    std::fs::create_dir_all(&common.out)
        .map_err(|e| rt(anyhow::anyhow!("creating {}: {e}", common.out.display())))?;
    let resolved = config.to_toml();
    info!("{name}: {n_threads} thread(s), resolved config:\n{resolved}");
    let run = Run {
        config,
        out: common.out.clone(),
    };
    std::fs::write(run.out.join(format!("{name}.config.toml")), &resolved)
        .map_err(|e| rt(anyhow::anyhow!("writing resolved config: {e}")))?;

    match &cli.command {
        Command::Gen(_) => commands::gen(&run, n_threads),
        Command::Pretrain(_) => commands::pretrain(&run),
        Command::Train(_) => commands::train(&run),
        Command::Eval(_) => commands::eval(&run).map(drop),
        Command::Identify { .. } => commands::identify(&run, log).map(drop),
        Command::Simulate(_) => commands::simulate(&run).map(drop),
    }
    .map_err(rt)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            error!("invalid configuration: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            error!("{e:#}");
            ExitCode::from(2)
        }
    }
}
