//! Boundary-driven lattice gases, Kac ring models and their fluctuation
//! relations: exact enumeration, stochastic simulation and macroscopic
//! deterministic dynamics.

// `!(x <= y)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exact;
pub mod kac;
pub mod kmc;
pub mod lattice;
pub mod qkac;

pub use error::{FluctError, Result};
