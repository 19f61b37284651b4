//! Desk-scale diffusion training laboratory.
//!
//! Trains a small denoising diffusion model on 2D toy distributions with a
//! batch-level structural constraint (pairwise affinity matching in an
//! embedding space) and an adversarial structure discriminator, then checks
//! the underlying math with numerical verification suites: forward-process
//! identities, gradient correctness against finite differences, joint-sample
//! score decomposition, and the Jensen bound chain behind the structural
//! objective.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod rng;
pub mod runlog;
pub mod sampler;
pub mod structure;
pub mod tensor;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor};
