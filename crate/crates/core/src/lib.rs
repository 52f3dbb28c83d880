//! Transition-level long-tail next-POI prediction.
//!
//! The crate reconstructs rare source→destination transitions from two kinds
//! of evidence: multi-hop paths in the training transition graph (a graph
//! token fed to a transformer backbone) and the user's own revisit history (a
//! clipped prior calibrated by a signed contextual gate). Training adds a
//! warm-transition holdout loss with the core score detached and activates
//! components under an epoch-staged curriculum.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod revisit;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
