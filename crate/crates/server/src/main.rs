use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    simsearch_server::cli::run(simsearch_server::cli::Cli::parse())
}
