//! Watermarking toolkit for discrete diffusion language models at toy scale.
//!
//! Three schemes over a shared reverse-diffusion core:
//!
//! - [`gumbel`]: distortion-free embedding via keyed Gumbel-max selection at
//!   every diffusion step, detected by rebuilding the keyed uniforms and
//!   scoring `-ln(1 - r)` across all seed offsets.
//! - [`greenlist`]: seeded red/green vocabulary partition with a logit bias
//!   inside a window of steps, detected by a green-count z score.
//! - [`scorescale`]: green-list tilting of the concrete score on
//!   continuous-time Markov chain diffusion (absorbing or uniform kernels)
//!   through an exact one-step posterior denoiser.
//!
//! [`stats`] verifies the two analytic guarantees — distribution
//! preservation of the Gumbel-max scheme and the exponential false-alarm
//! bound — and sweeps the biased schemes' hyperparameters. [`attacks`]
//! provides bounded edits for robustness runs, and [`manifest`] pins every
//! run for byte-exact reproduction.

pub mod attacks;
pub mod diffusion;
mod error;
pub mod greenlist;
pub mod gumbel;
pub mod manifest;
pub mod prf;
pub mod scorescale;
pub mod stats;
pub mod types;

pub use error::{Error, Result};
pub use types::{DetectionReport, ProbMatrix, SequenceState, Verdict, Vocabulary, WatermarkKey};
