mod args;
mod commands;
mod output;

use std::fs;
use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};
use serde_json::json;

use args::Cli;
use commands::CliError;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::from(1),
                _ => {
                    print_flags();
                    ExitCode::from(1)
                }
            };
        }
    };

    let rendered = match commands::run(&cli.command, &cli.run) {
        Ok(out) => out.render(cli.run.format),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
        Err(CliError::Input(msg)) => return report("InvalidInput", &msg),
        Err(CliError::Domain(e)) => return report(e.kind(), &e.to_string()),
    };

    let written = match &cli.run.out {
        Some(path) => fs::write(path, rendered.as_bytes()),
        None => std::io::stdout().lock().write_all(rendered.as_bytes()),
    };
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report("Io", &e.to_string()),
    }
}

/// Lists the flags of the subcommand being invoked (or the top-level ones).
fn print_flags() {
    let mut cmd = Cli::command();
    cmd.build();
    let name = std::env::args().nth(1).unwrap_or_default();
    let help = match cmd.find_subcommand_mut(&name) {
        Some(sub) => sub.render_help(),
        None => cmd.render_help(),
    };
    eprintln!("\n{help}");
}

fn report(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({"error": kind, "message": message}));
    ExitCode::from(2)
}
