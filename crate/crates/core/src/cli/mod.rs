//! The `coaccel` command-line tool: config loading, run directories and one
//! subcommand per workflow.

mod commands;
mod config;
mod plots;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::env::EnvKind;
use crate::Result;

pub use config::{DasSection, MenusFile, NetSpec, ParetoSection, RunConfig, TeacherSpec, MENUS_FORMAT, RUN_FORMAT, RUN_VERSION};
pub use plots::export_plots;
pub use rundir::{code_version, Report, RunDir, FORMAT_VERSION, MANIFEST_FORMAT, REPORT_FORMAT, TRACE_FORMAT};

/// Output root used when neither `--out`, `COACCEL_OUT` nor the config
/// names one.
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "coaccel", version, about = "Agent architecture and accelerator co-search")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply without one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root for run directories.
    #[arg(long, global = true, env = "COACCEL_OUT")]
    pub out: Option<PathBuf>,
    /// Run directory name; defaults to `<command>-<env>-s<seed>`.
    #[arg(long, global = true)]
    pub name: Option<String>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub env: Option<EnvKind>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the fixed network from `[net]` with actor-critic.
    Train {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Joint architecture and accelerator search.
    Search {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Accelerator search for a fixed network.
    Das {
        #[arg(long)]
        net: PathBuf,
        /// Menus file; defaults to `[menus]` of the config.
        #[arg(long)]
        menus: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Also enumerate the whole space and print both results.
        #[arg(long)]
        brute_force: bool,
    },
    /// Mean return of a saved network.
    Eval {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 30)]
        episodes: usize,
    },
    /// Cost a network on a saved accelerator configuration.
    AccelEval {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        cfg: PathBuf,
    },
    /// λ sweep from `[pareto]`.
    Pareto {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Plot-ready CSVs from a finished run directory.
    ExportPlots { run: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Search { .. } => "search",
            Command::Das { .. } => "das",
            Command::Eval { .. } => "eval",
            Command::AccelEval { .. } => "accel-eval",
            Command::Pareto { .. } => "pareto",
            Command::ExportPlots { .. } => "export-plots",
        }
    }
}

/// Loads the config, applies flag overrides and runs the subcommand.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = cli.env {
        cfg.env = e;
    }
    cfg.sync();
    cfg.validate().map_err(crate::Error::Config)?;

    let jobs = if cfg.deterministic { 1 } else { cli.jobs.unwrap_or(0) };
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();

    if let Command::ExportPlots { run } = &cli.command {
        export_plots(run)?;
        return Ok(run.clone());
    }
    let root = cli.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let name = cli.name.clone().unwrap_or_else(|| format!("{}-{}-s{}", cli.command.name(), cfg.env, cfg.seed));
    let dir = RunDir::create(&root, &name)?;
    commands::dispatch(&cli.command, &mut cfg, &dir)?;
    println!("run directory: {}", dir.path.display());
    Ok(dir.path)
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
