//! Nonparametric Bayesian language modelling.
//!
//! - [`pyp`]: Pitman-Yor restaurants and hyperparameter samplers
//! - [`hpylm`]: hierarchical Pitman-Yor n-gram model
//! - [`nhmm`]: n-gram HMM language model with Dirichlet-process transitions,
//!   Pitman-Yor emissions and beam-sampled blocked Gibbs inference
//! - [`init`]: truncated EM used to seed the hidden states
//! - [`lda`]: collapsed-Gibbs LDA for genre labels
//! - [`jointspace`]: genre-switched joint models and similar-word queries
//! - [`format`]: model file reader/writer

pub mod baseline;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod format;
pub mod hpylm;
pub mod init;
pub mod jointspace;
pub mod lda;
pub mod nhmm;
pub mod pyp;
pub mod rng;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
