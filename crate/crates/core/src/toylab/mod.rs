//! Desk-scale end-to-end pipeline: synthetic biased pair data, two dropout MLP
//! encoders trained with hinge rank losses, and Monte-Carlo embedding extraction.

pub mod encoder;
pub mod loss;
pub mod pipeline;
pub mod study;
pub mod synth;
pub mod train;

pub use encoder::{Encoder, EncoderPair, Masks};
pub use loss::{hinge_loss, hinge_loss_max, hinge_loss_mean, HingeVariant, LossGrad};
pub use pipeline::{derive_seed, run_toy, SplitEmbeddings, ToyConfig, ToyRun};
pub use study::{
    averaging_study, cluster_study, reliability_study, shift_study, AveragingStudy, ClusterStudy,
    ReliabilityStudy, ShiftStudy,
};
pub use synth::{gen_synthetic, zipf_weights, PairedSet, SynthConfig, SynthData, SynthWorld};
pub use train::{deterministic_embed, mc_embed, train, TrainConfig, TrainLog};
