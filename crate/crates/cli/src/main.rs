use clap::Parser;
use posefuzz_cli::{execute, Cli, ExitKind};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitKind::Config.code() } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(execute(&cli));
}
