use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    nmg::cli::run(nmg::cli::Cli::parse())
}
