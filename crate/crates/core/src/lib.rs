//! Deterministic federated-learning simulation with multi-prototype
//! contrastive training (MP-FedCL) and the usual baselines.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: a row-major dense matrix used for batches, embeddings and weights.
//! - [`nn`]: the encoder + head MLP, analytic backpropagation and momentum SGD.
//! - [`losses`]: cross-entropy, the prototype contrastive regularizer, FedProx and FedProto terms.
//! - [`kmeans`]: Lloyd's algorithm used to turn per-class embeddings into prototypes.
//! - [`prototypes`]: local multi-prototypes, the server-side pool and its padding.
//! - [`datasets`]: IDX ingestion, synthetic data and the non-IID partitioners.
//! - [`federation`]: the round-based orchestrator for all six algorithms.
//! - [`inference`]: nearest-prototype and classifier prediction, accuracy reports.
//! - [`diagnostics`]: empirical convergence constants and the learning-rate bound.
//! - [`config`] and [`harness`]: JSON run configs, experiment commands and CSV output.
//!
//! Runnable walkthroughs for each capability live in the crate's `examples/`.

pub mod config;
pub mod datasets;
pub mod diagnostics;
pub mod error;
pub mod federation;
pub mod harness;
pub mod inference;
pub mod kmeans;
pub mod losses;
pub mod nn;
pub mod prototypes;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Matrix;
