use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    samosa_lab::cli::main(samosa_lab::cli::Cli::parse())
}
