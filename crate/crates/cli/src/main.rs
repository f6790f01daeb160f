use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("GL_LOG"))
        .with_writer(std::io::stderr)
        .init();
    grainledger_cli::run(grainledger_cli::Cli::parse())
}
