mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Outcome;
use config::ScenarioConfig;
use manifest::Artifacts;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("identity check failed: {0}")]
    IdentityFailed(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::IdentityFailed(_) | CliError::Numerical(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rbm", version, about = "Stationary convection solver with boundary optimal control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Scenario file (TOML); defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overriding `optimizer.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the discrete identity suite.
    Verify(Common),
    /// Solve the state equations for the initial controls.
    Solve(Common),
    /// Run the projected-gradient optimizer.
    Optimize(Common),
    /// Solve over a parameter axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `name=v1,v2,...` with name one of pr, ra, ma, bi, b.
        #[arg(long)]
        axis: Option<String>,
    },
}

fn load(common: &Common) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.optimizer.seed = s;
    }
    if let Some(d) = &common.out {
        cfg.output.dir = d.clone();
    }
    if let Some(t) = common.threads {
        cfg.sweep.threads = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cmd: &Command) -> Result<u8, CliError> {
    let (name, common) = match cmd {
        Command::Verify(c) => ("verify", c),
        Command::Solve(c) => ("solve", c),
        Command::Optimize(c) => ("optimize", c),
        Command::Sweep { common, .. } => ("sweep", common),
    };
    let cfg = load(common)?;
    let mut out = Artifacts::new(commands::out_dir(&cfg, None))?;
    let result = match cmd {
        Command::Verify(_) => commands::verify(&cfg, &mut out),
        Command::Solve(_) => commands::solve(&cfg, &mut out),
        Command::Optimize(_) => commands::optimize(&cfg, &mut out),
        Command::Sweep { axis, .. } => commands::sweep(&cfg, axis.as_deref(), cfg.sweep.threads, &mut out),
    };
    let code = match &result {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::NotConverged) => 2,
        Err(e) => e.exit_code(),
    };
    out.finish(name, &cfg.to_toml(), i32::from(code))?;
    result.map(|_| code)
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
    match run(&cli.command) {
        Ok(code) => {
            if code == 2 {
                eprintln!("not converged");
            }
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
