//! Benchmarking and fuzzing harness for pose-estimation algorithms.
//!
//! Frames are read from `SLMF` streams ([`dataset`]), optionally corrupted on the
//! fly ([`perturbation`]), streamed to an algorithm subprocess ([`runner`]) and
//! scored ([`image_metrics`], [`trajectory_metrics`]). [`diagnostics`] builds
//! failure windows, robustness sweeps and loop-closure threshold estimates on top.

pub mod dataset;
pub mod diagnostics;
pub mod image_metrics;
pub mod perturbation;
pub mod runner;
pub mod synth;
pub mod trajectory_metrics;
