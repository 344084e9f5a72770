use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use contraction_cli::{configure_threads, run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // help and version are not errors
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|()| run(&cli));
    match result {
        Ok(outcome) => {
            // a closed pipe downstream is not our failure
            let _ = writeln!(std::io::stdout().lock(), "{}", outcome.json);
            if let Some(msg) = &outcome.message {
                eprintln!("{}: {msg}", outcome.command);
            }
            ExitCode::from(if outcome.passed { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
