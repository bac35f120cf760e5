use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use homescope_collector::{serve, Config};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(version, about = "homescope collector service")]
struct Args {
    /// TOML config file. HOMESCOPE_* environment variables override it.
    #[arg(long, env = "HOMESCOPE_CONFIG")]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into())).init();
    let args = Args::parse();
    let config = match Config::load(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match serve(config).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
