//! Training losses and evaluation metrics.

mod losses;
mod metrics;

pub use losses::*;
pub use metrics::*;
