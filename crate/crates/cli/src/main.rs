//! `dgd`: train, infer, sample, eval and export-latent for the deep
//! generative decoder.
//!
//! Exit codes: 0 on success, 1 when training diverges, 2 for usage or data
//! errors. `DGD_THREADS` sets the kernel worker count (default 1).

mod args;
mod commands;
mod run;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn threads_from_env() -> Result<usize, String> {
    match std::env::var("DGD_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("DGD_THREADS must be a positive integer, got '{v}'")),
        Err(_) => Ok(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match threads_from_env() {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    dgd::parallel::init_global_pool(threads);

    let result = match cli.command {
        Command::Train(a) => commands::train(*a),
        Command::Infer(a) => commands::infer(a),
        Command::Sample(a) => commands::sample(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportLatent(a) => commands::export_latent(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_divergence() { 1 } else { 2 })
        }
    }
}
