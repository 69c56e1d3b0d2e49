//! Bayesian functional principal components analysis fitted by variational
//! message passing on a factor graph.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod error;
pub mod expfam;
pub mod fragments;
pub mod graph;
pub mod io;
pub mod orchestrator;
pub mod postprocess;
pub mod simulate;
pub mod splines;

pub use dataset::{Curve, FunctionalDataset};
pub use error::{FpcaError, Result};
pub use orchestrator::{fit, FitConfig, Hyperparameters, Model, ScoreMode, VmpState};
pub use postprocess::{postprocess, FpcaFit};
