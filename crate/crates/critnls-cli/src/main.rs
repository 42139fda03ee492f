//! `critnls` — command-line driver: one pipeline per subcommand, one run directory per
//! invocation, CSV outputs plus an atomically written `manifest.json`.

mod config;
mod output;
mod run;

use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    ExitCode::from(run::run_command(&args) as u8)
}
