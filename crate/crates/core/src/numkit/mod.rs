//! Dense arrays, categorical probability operations and seeded random streams.
//!
//! Probability math is always carried out in `f64`. Learned parameters may
//! use `f32` through the [`Real`] abstraction.

mod array;
mod prob;
mod rng;

pub use array::{NumArray, Real};
pub use prob::{entropy, kl_divergence, log_softmax_slice, softmax, softmax_slice, Categorical, PROB_FLOOR};
pub use rng::{sample_beta, RngStream};
