//! Uncertainty-aware active inference for temporally sparse sequence
//! classification.
//!
//! The crate is organized bottom-up:
//!
//! - [`numkit`]: arrays, categorical probability operations, seeded streams
//! - [`learnkit`]: layers, exact gradients, Adam, gradient checking
//! - [`genmodel`]: beliefs, confusion-derived likelihoods, free-energy loss
//! - [`efe`]: expected free energy, greedy frame selection, spatial attention
//! - [`uncertainty`]: Monte Carlo dropout scores and sample weights
//! - [`umix`]: uncertainty-weighted mixup
//! - [`synthdata`]: planted-signal benchmark generator and dataset files
//! - [`pipeline`]: training, evaluation, ablation, and reports

pub mod container;
pub mod efe;
pub mod error;
pub mod genmodel;
pub mod learnkit;
pub mod numkit;
pub mod pipeline;
pub mod synthdata;
pub mod umix;
pub mod uncertainty;

pub use error::{Error, Result};
