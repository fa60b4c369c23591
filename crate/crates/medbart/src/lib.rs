//! IO, file formats, configuration, and parallel drivers around
//! `medbart-core`, plus the batch command implementations behind the
//! `medbart` binary.
//!
//! Commands: `fit`, `effects`, `simulate`, `synth`, `validate`. Every
//! command is a pure function of (config, input files, seeds); reruns
//! produce identical outputs, and manifests record enough to re-derive any
//! output.

pub mod artifact;
pub mod config;
pub mod csvio;
pub mod error;
pub mod parallel;
pub mod runner;

pub use error::{AppError, AppResult};
pub use medbart_core as core;
