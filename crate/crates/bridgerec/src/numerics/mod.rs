//! Reverse-mode gradient engine, Adam optimizer, and gradient checking.
//!
//! The training objectives are built as define-by-run tapes over dense
//! 64-bit tensors ([`Tape`]), differentiated in one reverse sweep
//! ([`Tape::backward`]), and optimized through a named parameter store with
//! per-tensor Adam state ([`ParamStore`]). [`finite_diff_check`] validates
//! analytic gradients against central differences.
//!
//! Everything is plain `f64`, and serialized artifacts elsewhere in the
//! crate keep full precision so reloads are bit-exact.

mod adam;
mod fdcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, ParamStore};
pub use fdcheck::{finite_diff_check, FdReport};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("non-finite value at tape node {node} during {context}")]
    NonFinite { node: usize, context: &'static str },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss node must be scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("unknown parameter {0:?} in gradient map")]
    UnknownParam(String),
}
