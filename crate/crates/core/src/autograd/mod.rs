//! Reverse-mode automatic differentiation over dense `f32` tensors.
//!
//! Values are recorded on a [`Tape`] as the forward pass runs; [`Tape::backward`]
//! then walks the tape once in reverse, summing gradient contributions from
//! every consumer of a value. Only equal shapes or a single-element right
//! operand are accepted by the elementwise ops.

mod ops;
mod tape;
mod tensor;

pub use ops::{Activation, BinaryOp, Reduction};
pub use tape::{BackwardRule, Tape, Var};
pub use tensor::Tensor;
