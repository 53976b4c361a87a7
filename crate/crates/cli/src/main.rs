use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use hypflow_cli::commands::{self, Cli, InvalidInput};
use hypflow_cli::Exit;

fn main() -> ExitCode {
    let level = std::env::var("HYPFLOW_LOG_LEVEL").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();

    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let code = match commands::run(cli, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) if e.is::<InvalidInput>() => {
            eprintln!("error: {e}");
            Exit::Invalid
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            Exit::Failure
        }
    };
    let _ = std::io::stdout().flush();
    ExitCode::from(code as u8)
}
