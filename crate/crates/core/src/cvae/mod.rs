//! Cyclic conditional VAE that generates counterfactual rows.
//!
//! The encoder maps a row to a latent `u`; an adversarial discriminator
//! pushes `u` to carry no information about the sensitive group; the
//! decoder rebuilds the non-sensitive columns from `(u, s)`. Decoding the
//! same `u` under another group `s'` gives the counterfactual twin, and the
//! cycle loss asks that flipping twice returns the original row.

pub mod model;
pub mod train;

pub use model::{
    kl_standard_normal, other_group, CvaeArchitecture, CvaeBinding, CvaeLossWeights, CvaeModel,
    CvaeNoise, CvaeTerms, LatentSample, RowLayout, LOGVAR_MAX, LOGVAR_MIN,
};
pub use train::{
    cycle_distances, train_generator, CounterfactualGenerator, GeneratorConfig, GeneratorEpoch,
};
