//! Variational inference with temperature-conditional normalizing flows.
//!
//! The crate trains rational-quadratic spline coupling flows whose
//! conditioner networks receive the temperature as an extra input. Training
//! tempers the target posterior and the Gaussian base distribution together,
//! so that a flow fitted at one temperature remains a good map at another.
//!
//! Module map:
//!
//! - [`mathcore`]: seeded random streams, chi-square quantiles, Gaussian and
//!   log-sum-exp kernels.
//! - [`diffgraph`]: a batched reverse-mode tape over dense matrices.
//! - [`spline`] and [`flow`]: the spline transform and the coupling flow.
//! - [`targets`]: ring mixture, randomized Gaussian mixtures, eight schools.
//! - [`tempering`]: tempered base, training objectives and schedules.
//! - [`trainer`]: AdamW, the two-phase training loop, ELBO, checkpoints.
//! - [`evidence`]: importance-sampling evidence with tempered proposals.
//! - [`evaluate`]: mode capture, grid transforms and sample export.

pub mod diffgraph;
pub mod error;
pub mod evaluate;
pub mod evidence;
pub mod flow;
pub mod mathcore;
pub mod spline;
pub mod targets;
pub mod tempering;
pub mod trainer;

pub use error::{Error, Result};
