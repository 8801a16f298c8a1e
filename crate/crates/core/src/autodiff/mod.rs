//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every primitive as it is evaluated; [`Tape::backward`]
//! walks the record in reverse and accumulates exact gradients into the
//! tracked leaves. Build a fresh tape for every forward pass.
//!
//! Non-smooth points follow fixed conventions: `relu` has slope 0 at 0 and
//! `max` routes its gradient to the lowest index among tied maxima.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, relative_error, FdReport};
pub use tape::{Axis, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: [usize; 2], len: usize },
    #[error("row {row} has {found} entries, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{op}: index {index} out of bounds for {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot([usize; 2]),
}
