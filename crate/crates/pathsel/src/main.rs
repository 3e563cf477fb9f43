use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = pathsel::cli::Cli::parse();
    match pathsel::cli::run(&cli, &mut std::io::stdout()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
