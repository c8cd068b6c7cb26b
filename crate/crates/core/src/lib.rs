//! Scalar conservation laws whose flux switches between two functions
//! according to the sign of the spatial gradient.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod envelope;
pub mod flux;
pub mod profile;
pub mod riemann;
pub mod viscous;
pub mod semigroup;
pub mod diagnostics;
pub mod runner;
