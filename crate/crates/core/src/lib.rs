//! Numerical laboratory for the space-homogeneous Landau equation with very
//! soft potentials and its Fisher-information dissipation structure.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cli;
pub mod config;
pub mod convolution;
pub mod error;
pub mod evolution;
pub mod functionals;
pub mod gamma2;
pub mod grid;
pub mod kernel;
pub mod linalg;
pub mod numeric;
pub mod operator;
pub mod pair;
pub mod snapshot;
pub mod sphere;

pub use error::{Error, Result};
