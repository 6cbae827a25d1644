//! Runs an algorithm as a subprocess and streams frames to it over a
//! length-prefixed stdin/stdout protocol with exactly one frame in flight.

pub mod mock;
mod protocol;
mod session;

pub use protocol::*;
pub use session::*;

use std::time::Duration;

use thiserror::Error;

use crate::dataset::DatasetError;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("failed to spawn {program}: {source}")]
    Spawn { program: String, source: std::io::Error },
    #[error("no READY within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("expected {expected}, got {got}")]
    UnexpectedMessage { expected: &'static str, got: &'static str },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("algorithm exited (code {exit_code:?}): {reason}")]
    ChildExited { exit_code: Option<i32>, reason: String, stderr_tail: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
