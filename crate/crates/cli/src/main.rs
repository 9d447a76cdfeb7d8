use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = kis_cli::Cli::parse();
    match kis_cli::run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
