//! Command-line front end over the phases.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::config::ExperimentConfig;
use super::phases::Run;
use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "locmap", version, about = "Learned localization maps for serial EnKF twin experiments")]
struct Cli {
    /// JSON experiment configuration (defaults to the full-scale preset).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory for run outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the truth trajectory.
    Nature,
    /// Draw observation records for every setup.
    Observe,
    /// Run the regressor filter and fit the localization maps.
    Train,
    /// Tune the Gaspari-Cohn half-width per case.
    TuneGc,
    /// Run the verification sweep and write the results CSV.
    Verify,
    /// Summarize the results CSV.
    Report,
    /// Every phase in order.
    All,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::full_scale(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let mut run = Run::open(load_config(cli)?)?;
    println!("run directory: {}", run.dir().display());
    match cli.command {
        Command::Nature => run.nature()?,
        Command::Observe => run.observe()?,
        Command::Train => run.train()?,
        Command::TuneGc => run.tune_gc()?,
        Command::Verify => {
            run.verify()?;
            println!("results: {}", run.results_path().display());
        }
        Command::Report => print!("{}", run.report()?),
        Command::All => {
            run.nature()?;
            run.observe()?;
            run.train()?;
            run.tune_gc()?;
            run.verify()?;
            print!("{}", run.report()?);
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status: 0 on success, 1 on usage or input errors, 2 on
/// numerical failure.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))
            .and_then(|pool| pool.install(|| execute(&cli))),
        None => execute(&cli),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}
