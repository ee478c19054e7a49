use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedkme::data::write_csv;
use fedkme::experiment::{generate_datasets, run_experiment, ExperimentConfig, RunMode};
use fedkme::Error;

#[derive(Parser, Debug)]
#[command(name = "fedkme", version, about = "Federated transfer learning with kernel mean embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output location; defaults to `output_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 lets rayon decide).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the generated agents as CSV (a file path, or a directory receiving data.csv).
    Gen(Common),
    /// Run all configured methods and write results.csv, weights.csv and comm.csv.
    Run(Common),
    /// Learn aggregation weights only (weights.csv and comm.csv).
    Weights(Common),
    /// Score the configured baseline methods only (results.csv).
    Baseline(Common),
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&common.config).map_err(|e| match e {
        Error::Io { .. } | Error::Config(_) => Failure::Config(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    })?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

fn gen(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let datasets = with_pool(common.threads, || generate_datasets(&cfg))??;
    let target = if cfg.output_dir.is_dir() {
        cfg.output_dir.join("data.csv")
    } else {
        cfg.output_dir.clone()
    };
    if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::from(Error::io(parent, e)))?;
    }
    let file = fs::File::create(&target).map_err(|e| Failure::from(Error::io(&target, e)))?;
    write_csv(std::io::BufWriter::new(file), &datasets).map_err(|e| Failure::from(Error::io(&target, e)))?;
    eprintln!("wrote {}", target.display());
    Ok(())
}

fn run(common: &Common, mode: RunMode) -> Result<(), Failure> {
    let cfg = load(common)?;
    let out = with_pool(common.threads, || run_experiment(&cfg, mode))??;
    let dir: &Path = &cfg.output_dir;
    out.write(dir, mode)?;
    let failed = out.results.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        eprintln!("{failed} result rows recorded errors");
    }
    eprintln!("wrote outputs to {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Gen(c) => gen(c),
        Command::Run(c) => run(c, RunMode::Full),
        Command::Weights(c) => run(c, RunMode::WeightsOnly),
        Command::Baseline(c) => run(c, RunMode::BaselinesOnly),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
