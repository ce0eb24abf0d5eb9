//! Dense-network engine: recorded forward passes, reverse-mode gradients,
//! Adam, and finite-difference gradient checks.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod mlp;

pub use adam::AdamState;
pub use checkpoint::{Checkpointable, NetworkCheckpoint};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Matrix, ValueGraph, Var};
pub use mlp::{mlp_apply, mlp_forward, Activation, Layer, MlpBinding, MlpParams, MlpSpec};
