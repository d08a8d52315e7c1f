//! Command-line front end for cpppkit.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{CliResult, Settings};

#[derive(Debug, Parser)]
#[command(name = "cpppkit", version, about = "Posterior predictive and calibrated p-values")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the real data and report ppp.
    Ppp(Common),
    /// Full calibration: cppp with standard errors and a verdict.
    Cppp(Common),
    /// Analytic bias/variance/RMSE grid under a Beta null.
    Scenario(Common),
    /// Repeat the calibration to compare SE estimates with the actual spread.
    Repeat(Common),
    /// Plot-ready CSVs from earlier cppp results.
    Report(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Overrides, e.g. r=200 m_tilde=100
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Common {
    fn settings(&self) -> CliResult<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        for o in &self.overrides {
            s.set_pair(o)?;
        }
        if let Some(seed) = self.seed {
            s.set("seed", &seed.to_string())?;
        }
        if let Some(w) = self.workers {
            s.set("workers", &w.to_string())?;
        }
        Ok(s)
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Ppp(c) => commands::cmd_ppp(&c.settings()?),
        Command::Cppp(c) => commands::cmd_cppp(&c.settings()?),
        Command::Scenario(c) => commands::cmd_scenario(&c.settings()?),
        Command::Repeat(c) => commands::cmd_repeat(&c.settings()?),
        Command::Report(c) => commands::cmd_report(&c.settings()?),
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
