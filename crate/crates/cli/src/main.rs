use std::process::ExitCode;

use clap::Parser;
use shipnet_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    match run(&cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
