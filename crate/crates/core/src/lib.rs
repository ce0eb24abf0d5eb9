//! Fair representation learning for tabular data.
//!
//! The pipeline has three stages:
//!
//! 1. [`cvae`] fits a cyclic conditional VAE that produces a counterfactual
//!    twin of each row with its sensitive attribute flipped.
//! 2. [`faircl`] trains an embedding network whose per-group embedding
//!    distributions are pulled onto a shared Gaussian prior with sliced
//!    Wasserstein distance, whose embeddings of a row and its twin are
//!    aligned, and whose utility is kept by self-distillation over TabMix
//!    perturbations.
//! 3. [`eval`] fits linear probes on frozen embeddings and reports AUC/RMSE,
//!    demographic parity, equalized odds, counterfactual parity and
//!    sensitive-attribute leakage.
//!
//! [`tabular`] handles CSV loading, feature encoding and the synthetic
//! benchmark; [`neural`] is the small autodiff engine everything trains on.

pub mod cvae;
pub mod error;
pub mod eval;
pub mod faircl;
pub mod neural;
pub mod tabular;

pub use error::{Error, Result};
