//! Mock algorithm process: `posefuzz-mock '<json config>'`.

fn main() {
    let Some(config) = std::env::args().nth(1) else {
        eprintln!("usage: posefuzz-mock '<json config>'");
        std::process::exit(2);
    };
    posefuzz_core::runner::mock::run_process(&config);
}
