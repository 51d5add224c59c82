//! Decision-focused learning accelerated by per-example Gaussian-process
//! surrogates of a stochastically smoothed regret.
//!
//! The crate is organized bottom-up:
//!
//! * [`problems`]: benchmark families, exact solvers, true costs and regret.
//! * [`predictor`]: the trainable `x -> y_hat` model, Adam, and MSE pretraining.
//! * [`smoothing`]: Latin-hypercube probes, sample banks and the
//!   self-normalized importance-sampling estimate of the smoothed regret.
//! * [`surrogate`]: RBF Gaussian processes fitted to smoothed regrets.
//! * [`sfge`]: the score-function gradient fallback.
//! * [`trainer`]: the confidence-gated training loop and its metrics.
//! * [`report`]: aggregation of run directories into tables.
//! * [`cli`]: the `forge` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod predictor;
pub mod problems;
pub mod report;
pub mod rng;
pub mod sfge;
pub mod smoothing;
pub mod surrogate;
pub mod trainer;

pub use error::{ForgeError, Result};
