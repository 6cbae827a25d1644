//! Command-line front end: campaign configs, subcommands and result files.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use args::{Cli, Command, GlobalArgs};
pub use commands::{RunReport, Status};
pub use config::{CampaignConfig, Resolved};
pub use error::{CliError, ExitKind};

/// Runs one parsed invocation and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let g = &cli.global;
    let result = match &cli.command {
        Command::Inspect(a) => commands::inspect(a),
        Command::Synth(a) => commands::synth(g, a),
        Command::Run(a) => commands::run(g, a),
        Command::Fuzz(a) => commands::fuzz(g, a),
        Command::Diagnose(a) => commands::diagnose(g, a),
        Command::Loopthresh(a) => commands::loopthresh(g, a),
        Command::Mock { mock_json } => posefuzz_core::runner::mock::run_process(mock_json),
    };
    match result {
        Ok(Status::Ok) => 0,
        Ok(Status::AlgorithmFailed(reason)) => {
            eprintln!("algorithm failure: {reason}");
            if g.allow_failure {
                0
            } else {
                ExitKind::Algorithm.code()
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.kind.code()
        }
    }
}
