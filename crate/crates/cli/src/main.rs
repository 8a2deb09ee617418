//! `salad`: data preparation, training, scoring and evaluation from the
//! command line.

mod args;
mod config;
mod data;
mod error;
mod eval;
mod train;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    let root = cli.output_root.clone();
    match cli.command {
        Command::Synth(a) => data::synth(&a, &root),
        Command::Segment(a) => data::segment(&a, &root),
        Command::Split(a) => data::split(&a, &root),
        Command::Train(a) => train::train(&a, &root),
        Command::Score(a) => eval::score(&a, &root),
        Command::Eval(a) => eval::evaluate(&a, &root),
        Command::Report(a) => eval::report(&a, &root),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
