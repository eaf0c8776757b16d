//! Numerical building blocks: seeded randomness, weight tensors, the
//! reverse-mode tape used by every forward graph, and a central-difference
//! gradient oracle.

mod fdiff;
mod init;
mod rng;
mod stats;
pub mod tape;
mod tensor;

pub use fdiff::{finite_diff, max_relative_error, relative_error, GRAD_REL_FLOOR};
pub use init::{init_bernoulli, init_gaussian, InitScheme};
pub use rng::{RngState, RNG_ALGORITHM};
pub use stats::{median, RunningStats};
pub use tensor::ParamTensor;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
