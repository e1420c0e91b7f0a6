use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = kobs::Cli::parse();
    match cli.execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
