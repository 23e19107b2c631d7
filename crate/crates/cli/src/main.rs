mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use crate::args::{Cli, Command};

fn init_tracing(level: &str) {
    let filter = EnvFilter::try_new(level).unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    init_tracing(&cli.log_level);

    let file = match config::FileConfig::load(cli.config.as_deref()) {
        Ok(file) => file,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(1);
        }
    };

    let code = match cli.command {
        Command::ServeIdp(a) => commands::serve_idp(a, file).await,
        Command::ServeMcp(a) => commands::serve_mcp(a, file).await,
        Command::Conformance(a) => commands::conformance(a).await,
        Command::Bench(a) => commands::bench(a).await,
        Command::PolicyCheck(a) => commands::policy_check(a),
    };
    ExitCode::from(code)
}
