use std::process::ExitCode;

use clap::Parser;
use proctor_cli::commands::{emit, run, Cli};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("PROCTOR_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let format = cli.format;
    let result = run(cli);
    ExitCode::from(emit(format, result, &mut std::io::stdout(), &mut std::io::stderr()))
}
