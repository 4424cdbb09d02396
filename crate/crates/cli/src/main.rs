use std::fs::{self, File};
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use oacmab::env::{run_episode, FusionMode};
use oacmab::experiments::{emit_csv, read_results, run_mc, summarize, Cell, ExperimentConfig, Preset};
use oacmab::model::generate_environment;
use oacmab::par::{with_workers, Execution};

/// Monte-Carlo experiments and the interactive session service for
/// observation-aware contextual bandits.
#[derive(Debug, Parser)]
#[command(name = "oacmab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte-Carlo study and write CSV results.
    Run {
        /// TOML file whose keys override the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "fig4")]
        preset: Preset,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Run episodes one after another on the calling thread.
        #[arg(long)]
        sequential: bool,
        #[arg(long, env = "OACMAB_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Print the report for a directory written by `run`.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Write one episode's step records as JSON lines.
    Trace {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "fig6")]
        preset: Preset,
        /// Cell id such as `aif/psda/fp0.4` or `ts/no_human`.
        #[arg(long)]
        cell: String,
        #[arg(long, default_value_t = 0)]
        run: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn load(config: Option<PathBuf>, preset: Preset) -> anyhow::Result<ExperimentConfig> {
    match config {
        Some(path) => ExperimentConfig::load(&path, preset).with_context(|| format!("loading {}", path.display())),
        None => Ok(ExperimentConfig::preset(preset)),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, preset, workers, sequential, out } => {
            let mut cfg = load(config, preset)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
            if exec == Execution::Parallel && !Execution::available() && workers.is_some_and(|w| w > 1) {
                eprintln!("built without parallel support; running sequentially");
            }
            let table = with_workers(workers, || run_mc(&cfg, exec))??;
            let dir = &cfg.output_dir;
            emit_csv(&table, dir).with_context(|| format!("writing results to {}", dir.display()))?;
            fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
            let report = summarize(&table)?;
            fs::write(dir.join("summary.txt"), &report)?;
            print!("{report}");
            eprintln!("results written to {}", dir.display());
        }
        Command::Summarize { input } => {
            let table = read_results(&input).with_context(|| format!("reading results from {}", input.display()))?;
            print!("{}", summarize(&table)?);
        }
        Command::Trace { config, preset, cell, run, out } => {
            let cfg = load(config, preset)?;
            let cell = Cell::parse_id(&cell)?;
            if cell.fusion != FusionMode::NoHuman && cell.fp_rate.is_none() {
                bail!("cell {} needs a fault rate", cell.id());
            }
            let seed = cfg.base_seed.wrapping_add(run);
            let env = generate_environment(cfg.k, cfg.c, cfg.f, cfg.f_p - 1, seed)?;
            let traj = run_episode(&env, &cfg.episode_config(&cell, Execution::Sequential)?, seed)?;
            match out {
                Some(path) => traj.write_jsonl(BufWriter::new(File::create(&path)?))?,
                None => traj.write_jsonl(std::io::stdout().lock())?,
            }
        }
        Command::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://{addr}");
            rt.block_on(oacmab_service::serve(addr)).with_context(|| format!("serving on {addr}"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
