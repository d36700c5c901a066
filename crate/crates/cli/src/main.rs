//! `spe`: command-line front end for the spatial predictor envelope.
//!
//! Exit status is 0 on success, 2 for usage and input errors and 1 for
//! numerical failures. Failures also print a one-line JSON record
//! `{"error": <kind>, "message": <text>}` on standard error.

mod args;
mod commands;
mod error;
mod io;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("SPE_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| error::usage(format!("SPE_THREADS={v:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| error::usage(format!("cannot start {n} threads: {e}")))
}

fn run(cli: &Cli) -> CliResult<()> {
    init_threads()?;
    match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Select(a) => commands::select(a),
        Command::Predict(a) => commands::predict(a),
        Command::Cv(a) => commands::cv(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Transform(a) => commands::transform(a),
        Command::Fixture(a) => commands::fixture(a),
    }
}

fn report(err: &CliError) -> i32 {
    let record = serde_json::json!({ "error": err.name(), "message": err.to_string() });
    eprintln!("{record}");
    err.exit_code()
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            std::process::exit(report(&CliError::Usage(e.kind().to_string())));
        }
    };
    if let Err(e) = run(&cli) {
        std::process::exit(report(&e));
    }
}
