//! Interaction-aware LoRA on a toy frozen transformer, with a two-scale
//! mask decoder and the losses and metrics used to train and score it.

pub mod error;
pub mod lora;
pub mod mask_decoder;
pub mod model;
pub mod objectives;
pub mod tensor;

pub use error::{Error, Result};
