#![allow(dead_code)]

use std::path::{Path, PathBuf};

use posefuzz_core::diagnostics::BenchTarget;
use posefuzz_core::runner::mock::MockConfig;
use posefuzz_core::runner::AlgorithmCommand;
use posefuzz_core::synth::{write_synthetic, SynthParams};

pub fn mock_command(config: &MockConfig) -> AlgorithmCommand {
    AlgorithmCommand::new(env!("CARGO_BIN_EXE_posefuzz-mock")).arg(config.to_json())
}

pub fn synth_file(dir: &Path, name: &str, params: &SynthParams) -> PathBuf {
    let path = dir.join(name);
    write_synthetic(&path, params).unwrap();
    path
}

pub fn target(config: &MockConfig, dataset: &Path) -> BenchTarget {
    BenchTarget::new(mock_command(config), dataset)
}
