//! `sld`: sample, sweep, benchmark and plot from the command line.

mod args;
mod commands;
mod output;
mod plot;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let argv: Vec<String> = std::env::args().collect();
    let result = match &cli.command {
        Command::Sample(a) => commands::sample(a, &argv),
        Command::Sweep(a) => commands::sweep(a, &argv),
        Command::Bench(a) => commands::bench(a, &argv),
        Command::Plot(a) => plot::run(a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
