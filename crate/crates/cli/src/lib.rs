//! Command-line front end: argument parsing, config files, CSV formats and
//! the subcommands themselves.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::ffi::OsString;
use std::io::Write;

use clap::{CommandFactory, FromArgMatches};

use crate::args::{Cli, Command};
use crate::commands::Echo;
use crate::error::{CliError, CliResult};

pub const THREADS_ENV: &str = "MULTIPOET_THREADS";

/// Resolved value of every argument of the chosen subcommand, defaults included.
fn echo(matches: &clap::ArgMatches) -> Echo {
    let Some((name, sub)) = matches.subcommand() else {
        return Vec::new();
    };
    let cmd = Cli::command();
    let Some(spec) = cmd.find_subcommand(name) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    // `ids()` also yields argument groups; keep real arguments only.
    for id in sub.ids().filter(|id| spec.get_arguments().any(|a| a.get_id() == *id)) {
        if let Ok(Some(values)) = sub.try_get_raw(id.as_str()) {
            let joined: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
            out.push((id.as_str().replace('_', "-"), joined.join(",")));
        }
    }
    out
}

pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot set up {n} worker threads: {e}")))
}

/// Parses `argv` (program name first) and runs the command. Clap's own
/// errors and `--help` are returned as `Err(clap::Error)`.
pub fn run(argv: Vec<OsString>, stdout: &mut dyn Write) -> Result<CliResult<()>, clap::Error> {
    let argv = match config::expand_args(argv) {
        Ok(a) => a,
        Err(e) => return Ok(Err(e)),
    };
    let matches = Cli::command().try_get_matches_from(argv)?;
    let cli = Cli::from_arg_matches(&matches)?;
    let echo = echo(&matches);
    Ok(match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &echo),
        Command::Generate(a) => commands::generate(a, &echo),
        Command::Estimate(a) => commands::estimate(a, &echo),
        Command::Select(a) => commands::select(a, stdout),
        Command::Cluster(a) => commands::cluster(a, &echo),
        Command::Backtest(a) => commands::run_backtest(a, &echo, stdout),
    })
}
