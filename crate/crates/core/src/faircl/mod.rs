//! Fairness-aware contrastive training of the embedding network.
//!
//! Per step, a same-group batch is pulled toward its counterfactual twins
//! (alignment), its embeddings are matched to a standard Gaussian prior by
//! sliced Wasserstein distance, and a TabMix-perturbed copy is distilled
//! toward the stop-gradient embedding of the original.

pub mod losses;
pub mod stack;
pub mod tabmix;
pub mod train;

pub use losses::{
    align_graph, align_loss, fair_contrastive_loss, objective_graph, self_kd_graph, self_kd_loss,
    swd, swd_graph, swd_with, LossToggles, ObjectiveTerms, PriorSpec, SwdDraw, TrainBatch,
};
pub use stack::{EncoderSnapshot, EncoderStack, Representation, StackArchitecture, StackBinding};
pub use tabmix::{tabmix, Augmentation, MixLayout, MixMask, GAUSSIAN_AUG_STD};
pub use train::{
    fit_encoder_stack, group_mean_distance, train_encoder, EncoderConfig, EncoderEpoch, EncoderRun,
};
