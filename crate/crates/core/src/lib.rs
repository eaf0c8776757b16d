//! Path-space laboratory for gated ReLU networks.
//!
//! A network's output is written as an inner product between a neural path
//! feature (input times gate activity along each input-to-output path) and
//! a neural path value (product of weights along the path). This crate
//! builds the networks, enumerates paths, computes the neural path kernel
//! and checks it against the finite-width neural tangent kernel, and trains
//! the gated variants that separate gates from weights.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arch;
pub mod error;
pub mod io;
pub mod kernels;
pub mod numerics;
pub mod paths;
pub mod train;

pub use error::{Error, Result};
