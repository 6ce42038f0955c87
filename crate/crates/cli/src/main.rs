use std::process::ExitCode;

use clap::Parser;
use dapt_cli::commands::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", dapt_cli::error_line(&e));
            ExitCode::FAILURE
        }
    }
}
