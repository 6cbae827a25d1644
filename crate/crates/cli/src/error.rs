use posefuzz_core::dataset::DatasetError;
use posefuzz_core::diagnostics::DiagnosticsError;
use posefuzz_core::perturbation::ConfigError;
use posefuzz_core::runner::RunnerError;
use thiserror::Error;

/// Process exit status. The numeric values are a stable contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Algorithm = 1,
    Input = 2,
    Config = 3,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn algorithm(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Algorithm, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Input, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Config, message: message.into() }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<RunnerError> for CliError {
    fn from(e: RunnerError) -> Self {
        match e {
            RunnerError::Dataset(d) => d.into(),
            other => CliError::algorithm(other.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Dataset(d) => d.into(),
            DiagnosticsError::Runner(r) => r.into(),
            DiagnosticsError::Config(c) => c.into(),
            e @ DiagnosticsError::InvalidPairs { .. } => CliError::config(e.to_string()),
            e @ DiagnosticsError::InsufficientData(_) => CliError::input(e.to_string()),
            e @ (DiagnosticsError::Baseline(_) | DiagnosticsError::Pool(_)) => CliError::algorithm(e.to_string()),
        }
    }
}
