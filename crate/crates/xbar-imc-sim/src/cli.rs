//! Argument parsing and the process entry point.

use std::path::PathBuf;

use clap::Parser;

use crate::commands::{self, Command};
use crate::config::{ExperimentConfig, Overrides};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "xbar-imc-sim", version, about = "STT-MRAM in-memory-computing crossbar simulator")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory for reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing table files.
    #[arg(long)]
    pub force: bool,
}

impl Args {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            out_dir: self.out.clone(),
            kinds: None,
        }
    }
}

pub fn execute(args: &Args) -> Result<commands::Outcome> {
    let cfg = ExperimentConfig::load(&args.config, &args.overrides())?;
    commands::run(args.command, &cfg, args.force)
}

/// Parse, run and map the outcome to an exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&args) {
        Ok(o) => {
            println!("{}: {}", args.command.name(), o.summary);
            for f in &o.files {
                println!("  {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
