//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! The tape is rebuilt for every forward pass. Parameters are copied onto the
//! tape with [`Tape::leaf`]; after [`Tape::backward`] the returned
//! [`Gradients`] are added back into each parameter's grad buffer.

mod array;
mod tape;

pub use array::DiffArray;
pub use tape::{Axis, BinaryOp, Gradients, ReduceOp, Tape, UnaryOp, Var};
