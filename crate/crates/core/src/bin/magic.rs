use std::process::ExitCode;

use clap::Parser;
use magic_core::cli::{error_line, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = std::io::stdout().lock();
    let mut log = std::io::stderr();
    match run(cli, &mut out, &mut log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
