//! `key = value` config files. Each key names a flag of the chosen
//! subcommand (or a global flag); it is injected into argv only when the
//! flag was not given explicitly, so command-line flags always win.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::CommandFactory;

use crate::args::Cli;
use crate::error::CliError;

pub fn parse(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        out.push((key, v.trim().trim_matches('"').to_owned()));
    }
    Ok(out)
}

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_owned());
        }
    }
    None
}

fn has_flag(argv: &[String], flag: &str) -> bool {
    argv.iter()
        .any(|a| a == flag || a.strip_prefix(flag).is_some_and(|rest| rest.starts_with('=')))
}

/// Returns argv with config-file defaults spliced in after the subcommand.
pub fn apply(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let args: Vec<String> = argv
        .iter()
        .map(|a| a.to_str().map(str::to_owned))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::Usage("arguments must be UTF-8".into()))?;
    let Some(path) = config_path(&args) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Core(cpkit_core::Error::io(Path::new(&path), e)))?;
    let entries = parse(&text)?;

    let root = Cli::command();
    let sub_names: Vec<String> = root.get_subcommands().map(|s| s.get_name().to_owned()).collect();
    let Some(pos) = args.iter().position(|a| sub_names.contains(a)) else {
        return Ok(argv);
    };
    let sub = root
        .get_subcommands()
        .find(|s| s.get_name() == args[pos])
        .expect("subcommand exists");

    let mut injected = Vec::new();
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| CliError::Usage(format!("unknown config key {key:?} for {}", args[pos])))?;
        if key == "config" {
            continue;
        }
        let flag = format!("--{key}");
        if has_flag(&args, &flag) {
            continue;
        }
        if arg.get_action().takes_values() {
            injected.push(flag);
            injected.push(value);
        } else {
            match value.as_str() {
                "true" | "1" | "yes" => injected.push(flag),
                "false" | "0" | "no" => {}
                other => return Err(CliError::Usage(format!("config key {key}: expected a boolean, got {other:?}"))),
            }
        }
    }
    let mut out: Vec<OsString> = args[..=pos].iter().map(OsString::from).collect();
    out.extend(injected.into_iter().map(OsString::from));
    out.extend(args[pos + 1..].iter().map(OsString::from));
    Ok(out)
}
