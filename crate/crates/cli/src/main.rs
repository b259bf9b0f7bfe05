//! `mimnet`: data generation, training, manipulation, evaluation, gradient
//! checks, ablations and memory dumps.
//!
//! Exit status is 0 on success, 1 on a runtime failure and 2 on a usage
//! error (unknown flag or command, malformed `--set`, invalid config value).

mod args;
mod commands;
mod image;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::commands::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let json = cli.json;
    match commands::run(cli) {
        Ok(out) => {
            // A closed pipe (`| head`) is not a failure of the command.
            let mut stdout = std::io::stdout().lock();
            let _ = if json {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&out.json).expect("serializable"))
            } else {
                write!(stdout, "{}", out.text)
            };
            ExitCode::from(out.status)
        }
        Err(e) => {
            let code = match e {
                CliError::Usage(_) => 2,
                CliError::Runtime(_) => 1,
            };
            if json {
                let v = serde_json::json!({ "ok": false, "error": e.to_string() });
                let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).expect("serializable"));
            }
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
