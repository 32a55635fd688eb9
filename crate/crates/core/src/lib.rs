//! Reverse-inference preference optimization on a desk-scale synthetic
//! text-to-speech world.
//!
//! The crate is organised along the sampling → annotation → learning
//! pipeline:
//!
//! - [`seqmodel`]: a small conditional autoregressive model with exact
//!   log-likelihoods and gradients, sampling and supervised pretraining.
//! - [`synthworld`]: the synthetic speaker-style world and its three rule-based
//!   annotators (quality, word error rate, speaker similarity).
//! - [`inference`]: forward zero-shot generation, reverse inference with the
//!   texts swapped, and a brute-force check of the Bayes relation linking them.
//! - [`pools`]: candidate sampling and positive/negative pool selection.
//! - [`optim`]: implicit rewards, the detached reference point, the RIO value
//!   and loss, DPO/ODPO baselines and the optimization loop.
//! - [`eval`]: metric reports, comparison tables and the PPC study.
//! - [`experiment`]: configuration, seed derivation, artifact files and the
//!   end-to-end pipeline used by the `rio` binary.

pub mod checks;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod inference;
pub mod optim;
pub mod pools;
pub mod seed;
pub mod seqmodel;
pub mod synthworld;

pub use error::{Result, RioError};
