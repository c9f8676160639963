//! Dense feed-forward networks with exponential linear units, trained by
//! mini-batch SGD, plus the unit-Fisher / bias-shift analysis that motivates
//! ELUs.
//!
//! Heavy loops (batch gradients, evaluation, diagnostics, randomized lemma
//! checks) go through [`Exec`]: rayon with the default `parallel` feature,
//! plain iteration otherwise. Work is split into fixed chunks and reduced in
//! order, so both modes give bit-identical results.

pub mod activations;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod fisher;
pub mod io;
pub mod lemmas;
pub mod linalg;
pub mod netfile;
pub mod network;
pub mod optimizer;

pub use activations::Activation;
pub use data::Dataset;
pub use error::{Error, Result};
pub use exec::Exec;
pub use linalg::{Matrix, Vector};
pub use network::{Loss, Network, UnitRef};
pub use optimizer::TrainConfig;
