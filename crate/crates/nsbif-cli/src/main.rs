//! `nsbif`: simulate hybrid systems, continue bifurcation curves, analyse
//! codimension-two points and check tangency of curves.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(name = "nsbif", version, about = "Codimension-two border bifurcations of one-sided maps")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Integrate a hybrid system and write the trajectory.
    Simulate(Common),
    /// Continue a bifurcation curve of the system's return map.
    Continue(Common),
    /// Refine and analyse a codimension-two point.
    #[command(name = "analyze-codim2")]
    AnalyzeCodim2(Common),
    /// Fit the separation of two curves near a codimension-two point.
    #[command(name = "verify-tangency")]
    VerifyTangency(Common),
    /// List the built-in systems.
    #[command(name = "list-systems")]
    ListSystems,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Built-in system name, or `custom` for a [map] table in the config.
    #[arg(long)]
    pub system: Option<String>,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parameter override `name=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Continuation plane, `name1,name2`.
    #[arg(long)]
    pub plane: Option<String>,
    /// Curve type (fold, flip, ns, bc-fixed, bc-period2, fixed-point) or
    /// codimension-two case (fold, flip, ns).
    #[arg(long)]
    pub curve: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long = "t-max")]
    pub t_max: Option<f64>,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial state (simulate) as comma-separated values.
    #[arg(long)]
    pub x0: Option<String>,
    /// State of the starting or codimension-two point.
    #[arg(long)]
    pub z: Option<String>,
    /// Parameters of the starting or codimension-two point, `a1,a2`.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Primary curve CSV (verify-tangency).
    #[arg(long)]
    pub primary: Option<PathBuf>,
    /// Secondary curve CSV (verify-tangency).
    #[arg(long)]
    pub secondary: Option<PathBuf>,
    /// Codimension-two record JSON (verify-tangency).
    #[arg(long)]
    pub record: Option<PathBuf>,
}

/// A failed run with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure { code: 2, message: msg.into() }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Failure { code: 3, message: msg.into() }
    }
}

impl From<nsbif::Error> for Failure {
    fn from(e: nsbif::Error) -> Self {
        use nsbif::Error::*;
        let code = match e {
            InvalidParams(_) | ResonantTheta(_) | InvalidGamma(_) | InvalidSection(_) => 2,
            _ => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::config(format!("i/o: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.cmd {
        Cmd::Simulate(c) => commands::simulate(&c),
        Cmd::Continue(c) => commands::continue_cmd(&c),
        Cmd::AnalyzeCodim2(c) => commands::analyze(&c),
        Cmd::VerifyTangency(c) => commands::verify(&c),
        Cmd::ListSystems => commands::list_systems(),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("nsbif: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
