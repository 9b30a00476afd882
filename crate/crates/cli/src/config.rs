//! Flat `key = value` config files. Keys are flag names without the leading
//! dashes; flags given on the command line win over the file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::CommandFactory;

use crate::args::Cli;
use crate::error::{CliError, CliResult};

pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", n + 1)))?;
        let key = key.trim().replace('_', "-");
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("config line {}: duplicate key '{key}'", n + 1)));
        }
    }
    Ok(out)
}

/// Turns config entries into flags for `subcommand`, rejecting keys it does
/// not accept.
pub fn config_flags(subcommand: &str, entries: &BTreeMap<String, String>) -> CliResult<Vec<OsString>> {
    let cmd = Cli::command();
    let sub = cmd
        .find_subcommand(subcommand)
        .ok_or_else(|| CliError::Config(format!("unknown command '{subcommand}'")))?;
    let mut flags = Vec::new();
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| CliError::Config(format!("unknown config key '{key}' for {subcommand}")))?;
        let takes_value = arg.get_action().takes_values();
        if takes_value {
            flags.push(format!("--{key}={value}").into());
        } else {
            match value.as_str() {
                "true" => flags.push(format!("--{key}").into()),
                "false" => {}
                _ => {
                    return Err(CliError::Config(format!(
                        "config key '{key}' is a switch; use true or false"
                    )))
                }
            }
        }
    }
    Ok(flags)
}

/// Rewrites `argv` so that entries from `--config FILE` come before the
/// command-line flags (later flags override earlier ones).
pub fn expand_args(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(sub_pos) = strs.iter().skip(1).position(|a| !a.starts_with('-')).map(|i| i + 1) else {
        return Ok(argv);
    };
    let mut path = None;
    for (i, a) in strs.iter().enumerate().skip(sub_pos + 1) {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = strs.get(i + 1).cloned();
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(Path::new(&path), e))?;
    let mut entries = parse_config(&text)?;
    let given: Vec<&str> = strs[sub_pos + 1..]
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();
    // validate every key, then drop the ones the command line sets again
    config_flags(&strs[sub_pos], &entries)?;
    entries.retain(|k, _| !given.contains(&k.as_str()));
    let flags = config_flags(&strs[sub_pos], &entries)?;
    let mut out: Vec<OsString> = argv[..=sub_pos].to_vec();
    out.extend(flags);
    out.extend(argv[sub_pos + 1..].iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    use crate::args::Command;

    #[test]
    fn file_values_are_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "# comment\nreps = 7\nseed = 3\nvalues = 60,120\noracle_counts = true\nout = x\n").unwrap();
        let argv: Vec<OsString> = ["multipoet", "simulate", "--config", cfg.to_str().unwrap(), "--seed", "9"]
            .iter()
            .map(Into::into)
            .collect();
        let cli = Cli::try_parse_from(expand_args(argv).unwrap()).unwrap();
        let Command::Simulate(s) = cli.command else { panic!() };
        assert_eq!((s.reps, s.seed, s.values.clone(), s.oracle_counts), (7, 9, vec![60.0, 120.0], true));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let entries = parse_config("repz = 3").unwrap();
        let err = config_flags("simulate", &entries).unwrap_err();
        assert!(err.to_string().contains("repz"));
        assert_eq!(err.exit_code(), 2);
        assert!(parse_config("no equals sign").is_err());
        assert!(parse_config("a = 1\na = 2").is_err());
    }
}
