//! patchlab: a desk-scale lab for subgroup-robust classifier training.
//!
//! The library has two halves that share one numeric core:
//!
//! - a training side — inter-subgroup translators (stage 1) and
//!   consistency-regularized robust objectives (stage 2), with ERM / GDRO /
//!   SGDRO baselines and ablations;
//! - a verification side — exact enumeration of coupled generative worlds,
//!   so that the information-theoretic identities the training method rests
//!   on (JSD/MI equalities, the prediction-invariance bound) can be audited
//!   numerically at tight tolerances.
//!
//! See the `harness` module for the CLI-facing experiment runner.

pub mod coupled;
pub mod divergences;
pub mod error;
pub mod invariance;
pub mod metrics;
pub mod numeric;
pub mod objectives;
pub mod rng;
pub mod train;
pub mod translate;

pub use error::{Error, Result};
