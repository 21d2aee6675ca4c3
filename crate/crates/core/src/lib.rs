//! Humor classifiers over aligned funny/serious headline pairs, plus the
//! attention and occlusion analyses used to inspect what they learned.
//!
//! The crate is organised along the analysis pipeline:
//!
//! * [`corpus`] loads and aligns the minimal-pair corpus.
//! * [`models`] holds the sentence encoders, classifier heads and the
//!   causal language-model baselines.
//! * [`training`] fits classifier variants with binary cross-entropy.
//! * [`evaluation`] computes accuracies, bootstrap intervals and t-tests.
//! * [`attention`] extracts attention tensors and computes divergence,
//!   special-position and chunk statistics.
//! * [`perturbation`] runs one-word-at-a-time masking sweeps.
//! * [`report`] writes CSV/JSON/SVG outputs and run manifests.

pub mod attention;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod perturbation;
pub mod report;
pub mod training;

pub use error::{Error, Result};
