use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = wiretap_cli::Cli::parse();
    match wiretap_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(wiretap_cli::exit_code(&err))
        }
    }
}
