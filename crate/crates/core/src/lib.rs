//! Low-rank Jacobi–Davidson eigensolvers for Kronecker-structured operators.

// `!(a <= b)` is used on purpose: it is also true for NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod cli;
pub mod correction;
pub mod dense;
pub mod eigensolvers;
pub mod error;
pub mod io;
pub mod krylov;
pub mod lowrank;
pub mod manifold;
pub mod operator;
pub mod problems;

pub use error::{Error, Result};
