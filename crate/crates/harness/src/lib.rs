//! Synthetic audio-visual task suite, training loop and router analysis for
//! the interaction-aware LoRA model in `avcoop-core`.

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod train;

pub use error::{HarnessError, Result};
