use std::process::ExitCode;

use clap::Parser;
use zskt::cli::Cli;

fn main() -> ExitCode {
    let (cmd, inputs) = Cli::parse().command.split();
    match zskt::commands::execute(cmd, &inputs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            ExitCode::from(2)
        }
    }
}
