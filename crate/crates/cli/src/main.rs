//! `markguard`: generate data, train, evaluate, calibrate, plot the
//! tradeoff curve, run the experiment matrix and serve.
//!
//! Exit status is 0 on success, 1 when the operation fails and 2 for usage
//! errors. Failures print `error[<code>]: <message>` on stderr.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(if cli.quiet { tracing::Level::WARN } else { tracing::Level::INFO })
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", error_code(&e));
            ExitCode::from(1)
        }
    }
}

/// The machine-readable code of the first library error in the chain.
fn error_code(e: &anyhow::Error) -> &'static str {
    use markguard_core::error::{DecisionError, FormatError, PipelineError, SynthError, TrainError};
    for cause in e.chain() {
        if let Some(x) = cause.downcast_ref::<TrainError>() {
            return x.code();
        }
        if let Some(x) = cause.downcast_ref::<SynthError>() {
            return x.code();
        }
        if let Some(x) = cause.downcast_ref::<DecisionError>() {
            return x.code();
        }
        if let Some(x) = cause.downcast_ref::<PipelineError>() {
            return x.code();
        }
        if let Some(x) = cause.downcast_ref::<FormatError>() {
            return x.code();
        }
        if let Some(x) = cause.downcast_ref::<markguard_service::ServiceError>() {
            return x.code();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "failed"
}
