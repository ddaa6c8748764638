// Index loops mirror the math; negated comparisons reject NaN along with the range.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bem;
pub mod checkpoint;
pub mod checks;
pub mod cli;
pub mod data;
pub mod error;
pub mod flight;
pub mod geometry;
pub mod linalg;
pub mod nn;
pub mod physics;
pub mod piml;
pub mod vlm;

pub use error::{Error, Result};
