use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stshadow::config::ExperimentConfig;
use stshadow::experiment::{self, RunOptions, REPORT_FILE, SHOT_FILE};
use stshadow::report::ExperimentReport;
use stshadow::shotfile::write_shots;
use stshadow::{Error, Result};

/// Environment variable giving the default worker count.
const THREADS_ENV: &str = "STSHADOW_THREADS";

#[derive(Parser)]
#[command(name = "stshadow", version, about = "Spacetime classical shadows of multi-qubit process tensors")]
struct Cli {
    /// Worker threads (default: $STSHADOW_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides protocol.master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: output.dir from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample shots and write them to a shot file.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Shot file to write (default: <out>/shots.stsh).
        #[arg(long)]
        shots: Option<PathBuf>,
        /// Overrides protocol.shots.
        #[arg(long)]
        count: Option<u64>,
    },
    /// Write median-of-means expectation tables from a shot file.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        shots: PathBuf,
    },
    /// Run the analysis and write report.json and manifest.json.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Read shots from this file instead of sampling.
        #[arg(long, conflicts_with = "exact")]
        shots: Option<PathBuf>,
        /// Use the exact process oracle.
        #[arg(long)]
        exact: bool,
        /// Compare shot-based results with the exact oracle.
        #[arg(long, conflicts_with = "exact")]
        verify: bool,
    },
    /// Shot-based analysis checked against the exact oracle.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        shots: Option<PathBuf>,
    },
    /// Print a report as a table.
    Report {
        /// report.json, or a directory containing one.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.protocol.master_seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn analyze(common: &Common, shots: Option<PathBuf>, exact: bool, verify: bool) -> Result<()> {
    let (cfg, out) = load(common)?;
    let opts = RunOptions { exact, verify, shots, out_dir: Some(out.clone()) };
    let run = experiment::run_experiment(&cfg, &opts)?;
    print!("{}", run.report.summary());
    if let Some(v) = &run.report.verification {
        println!("max |shadow - exact| = {:.4} bits", v.max_abs_deviation);
    }
    println!("report written to {}", out.join(REPORT_FILE).display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, shots, count } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(c) = count {
                cfg.protocol.shots = c;
            }
            let model = cfg.model()?;
            let set = experiment::simulate(&cfg, &model).map_err(|e| e.in_phase("sample shots"))?;
            let path = shots.unwrap_or_else(|| out.join(SHOT_FILE));
            write_shots(&path, &set).map_err(|e| e.in_phase("write shots"))?;
            println!("{} shots written to {}", set.len(), path.display());
        }
        Command::Estimate { common, shots } => {
            let (cfg, out) = load(&common)?;
            let set = experiment::load_shots(&shots, &cfg).map_err(|e| e.in_phase("load shots"))?;
            let dir = out.join("expectations");
            std::fs::create_dir_all(&dir)?;
            for (name, table) in experiment::estimate_tables(&cfg, &set).map_err(|e| e.in_phase("estimate"))? {
                table.write_column_file(&dir.join(format!("{name}.tsv")))?;
            }
            println!("expectation tables written to {}", dir.display());
        }
        Command::Analyze { common, shots, exact, verify } => analyze(&common, shots, exact, verify)?,
        Command::Verify { common, shots } => analyze(&common, shots, false, true)?,
        Command::Report { out } => {
            let path = if out.is_dir() { out.join(REPORT_FILE) } else { out };
            print!("{}", ExperimentReport::read(&path)?.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()));
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot start {t} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code: Error = e;
            ExitCode::from(code.exit_code() as u8)
        }
    }
}
