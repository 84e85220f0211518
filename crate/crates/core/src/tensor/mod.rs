//! Dense tensors, the differentiation tape, optimization and gradient checks.

mod array;
pub mod attention;
pub mod gradcheck;
pub mod optim;
mod param;
pub mod schedule;
mod tape;

pub use array::Tensor;
pub use attention::scaled_dot_attention;
pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
pub use optim::{AdamW, AdamWConfig};
pub use param::{ParamId, ParamStore, Parameter};
pub use schedule::cosine_warmup_lr;
pub use tape::{Gradients, Tape, Unary, Var};

/// Convenience for `row_softmax` on a value outside any training graph.
pub fn row_softmax(x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.softmax_rows(v);
    tape.value(y).clone()
}
