//! `cpkit` — ingest → build-tasks → train → embed → eval → mine → analyze.

mod args;
mod commands;
mod config;
mod error;
mod manifest;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use error::CliError;
use manifest::Recorder;

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::BuildTasks(_) => "build-tasks",
        Command::Train(_) => "train",
        Command::Embed(_) => "embed",
        Command::Eval(_) => "eval",
        Command::Mine(_) => "mine",
        Command::Analyze(_) => "analyze",
    }
}

fn dispatch(cli: &Cli, effective: &[String]) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return error::usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let mut rec = Recorder::new(command_name(&cli.command), effective);
    let default_manifest = match &cli.command {
        Command::Ingest(a) => commands::ingest(a, &mut rec)?,
        Command::BuildTasks(a) => commands::build_tasks(a, &mut rec)?,
        Command::Train(a) => commands::train(a, &mut rec)?,
        Command::Embed(a) => commands::embed(a, &mut rec)?,
        Command::Eval(a) => commands::eval(a, &mut rec)?,
        Command::Mine(a) => commands::mine(a, &mut rec)?,
        Command::Analyze(a) => commands::analyze(a, &mut rec)?,
    };
    rec.finish(cli.manifest.as_ref().unwrap_or(&default_manifest))?;
    Ok(())
}

fn run(argv: Vec<OsString>) -> u8 {
    let argv = match config::apply(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("cpkit: {e}");
            return e.exit_code() as u8;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let effective: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(&cli, &effective) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("cpkit: {e}");
            e.exit_code() as u8
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    ExitCode::from(run(std::env::args_os().collect()))
}
