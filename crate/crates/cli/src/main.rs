mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use commands::Failure;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // --help and --version are not errors
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Usage(message) => {
                    eprintln!("error: {message}");
                    eprintln!("\nFor more information, try '--help'.");
                }
                Failure::Stage { stage, message } => {
                    eprintln!("error: stage {stage} failed: {message}");
                }
            }
            ExitCode::from(failure.exit_code())
        }
    }
}
