//! Sensor and frame data model, the `SLMF` on-disk stream format, and trajectory
//! assembly from ground-truth frames.

mod format;
mod trajectory;
mod types;

pub use format::*;
pub use trajectory::*;
pub use types::*;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt stream at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("frame {frame_index} references unknown sensor {sensor_id}")]
    UnknownSensor { frame_index: u64, sensor_id: u32 },
    #[error("frame {frame_index} timestamp {timestamp_ns} precedes {previous_ns}")]
    TimestampRegression { frame_index: u64, previous_ns: u64, timestamp_ns: u64 },
    #[error("trajectory is empty (no ground-truth poses)")]
    EmptyTrajectory,
    #[error("no estimate/reference pairs within the gap bound")]
    NoOverlap,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
