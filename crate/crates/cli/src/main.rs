//! `ilv`: phantoms, projection, classical and ILV reconstruction,
//! evaluation and the view-count benchmark.

mod commands;
mod error;
mod geometry;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = match commands::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            if code != 0 {
                eprintln!("error kind: usage");
            }
            return ExitCode::from(code);
        }
    };
    if let Err(e) = commands::configure_threads() {
        eprintln!("error kind: {}\n{e}", e.kind());
        return ExitCode::from(1);
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind: {}\n{e}", e.kind());
            ExitCode::from(1)
        }
    }
}
