//! Dense arrays with tape-based reverse-mode differentiation, AdamW, and
//! global gradient-norm clipping.
//!
//! A [`Graph`] is passed explicitly to every primitive. Leaves are either
//! params (tracked) or constants (detached); an op on detached inputs only
//! produces another detached node.

mod array;
mod graph;
mod optim;

use alloc::vec::Vec;
use core::fmt;

pub use array::DenseArray;
pub use graph::{Gradients, Graph, NodeId, ParamId, Primitive};
pub use optim::{clip_global_norm, global_norm, AdamW, AdamWConfig};

#[derive(Clone, Debug, PartialEq)]
pub enum GradError {
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    InvalidShape {
        shape: Vec<usize>,
    },
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    BadSlice {
        start: usize,
        end: usize,
        len: usize,
    },
    NonFinite {
        op: &'static str,
    },
    NotScalar {
        shape: Vec<usize>,
    },
    Cycle {
        node: usize,
        parent: usize,
    },
}

impl fmt::Display for GradError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            GradError::InvalidShape { shape } => write!(f, "invalid shape {shape:?}"),
            GradError::Arity { op, expected, got } => {
                write!(f, "{op}: expected {expected} inputs, got {got}")
            }
            GradError::BadSlice { start, end, len } => {
                write!(f, "slice [{start}, {end}) out of range for axis of length {len}")
            }
            GradError::NonFinite { op } => write!(f, "{op}: non-finite value"),
            GradError::NotScalar { shape } => write!(f, "loss must be scalar, got shape {shape:?}"),
            GradError::Cycle { node, parent } => {
                write!(f, "cycle: node {node} lists parent {parent} that does not precede it")
            }
        }
    }
}

impl core::error::Error for GradError {}

#[cfg(test)]
mod tests;
