use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = otc_mm_cli::Cli::parse();
    match otc_mm_cli::run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
