//! `--config FILE` support.
//!
//! A config file holds `key = value` lines (`#` starts a comment). Each line
//! becomes `--key value` inserted right after the subcommand name, so flags
//! given on the command line come later and win. `key = true` becomes a bare
//! `--key` and `key = false` is dropped.

use std::ffi::OsString;
use std::path::Path;

use crate::{Cli, CliError, CliResult};

/// Global options that take a value, so their value is not the subcommand.
const VALUED_GLOBALS: [&str; 3] = ["--seed", "--precision", "--config"];

pub fn parse_file(text: &str, origin: &Path) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("{}:{}: expected `key = value`, got '{raw}'", origin.display(), n + 1))
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("{}:{}: invalid key '{}'", origin.display(), n + 1, k.trim())));
        }
        out.push((key, v.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn subcommand_index(args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if !s.starts_with('-') {
            return Some(i);
        }
        if VALUED_GLOBALS.contains(&s.as_ref()) {
            i += 1;
        }
        i += 1;
    }
    None
}

/// Splices config-file flags into `args`.
pub fn expand_args(mut args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let path = Path::new(&path).to_path_buf();
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut injected: Vec<OsString> = Vec::new();
    for (k, v) in parse_file(&text, &path)? {
        match v.as_str() {
            "true" => injected.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                injected.push(format!("--{k}").into());
                injected.push(v.into());
            }
        }
    }
    let Some(at) = subcommand_index(&args) else { return Ok(args) };
    args.splice(at + 1..at + 1, injected);
    Ok(args)
}

/// Pretty JSON of the parsed command line, defaults included.
pub fn describe(cli: &Cli) -> String {
    serde_json::to_string_pretty(cli).unwrap_or_else(|e| format!("<unprintable: {e}>"))
}
