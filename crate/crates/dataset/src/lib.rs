//! Tools for turning plain audio-visual labels into reasoning-annotated
//! training targets: few-shot prompts, response grammars, consistency checks,
//! quality filtering and mask-to-box conversion.
//!
//! ```
//! use avcoop_dataset::label::{parse_response, FinalLabel, TaskKind};
//!
//! let t = parse_response("Reasoning: engines roar.\nAnswer: Race car, auto racing, [0,10]", TaskKind::Ave).unwrap();
//! let FinalLabel::Ave(e) = t.label else { unreachable!() };
//! assert_eq!((e.name.as_str(), e.start, e.end), ("Race car, auto racing", 0, 10));
//! ```

pub mod client;
pub mod consistency;
pub mod error;
pub mod label;
pub mod mask;
pub mod pipeline;
pub mod template;

pub use error::{DatasetError, ParseError, Result};
