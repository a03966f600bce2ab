use std::io::Write;
use std::process::ExitCode;

use avlab::commands;
use avlab::Cli;
use clap::Parser;

/// `AVLAB_LOG` picks the verbosity: error (default), info or debug.
fn init_logging() -> Result<(), String> {
    let level = match std::env::var("AVLAB_LOG") {
        Ok(v) => match v.as_str() {
            "error" => log::LevelFilter::Error,
            "info" => log::LevelFilter::Info,
            "debug" => log::LevelFilter::Debug,
            other => return Err(format!("AVLAB_LOG must be error, info or debug, got {other:?}")),
        },
        Err(_) => log::LevelFilter::Error,
    };
    env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).init();
    Ok(())
}

fn main() -> ExitCode {
    if let Err(msg) = init_logging() {
        eprintln!("avlab: {msg}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("avlab: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
