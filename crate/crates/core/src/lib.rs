//! Uncertainty quantification for cross-modal embedding-and-retrieval.
//!
//! Given `L` Monte-Carlo sampled embeddings per sample (e.g. from dropout kept
//! active at inference), this crate computes
//!
//! * model-averaged retrieval (feature averaging and posterior averaging),
//! * retrieval metrics (R@K, median rank),
//! * feature uncertainty (embedding variance) and posterior uncertainty
//!   (mutual information of the temperature-softmax retrieval posterior),
//! * uncertainty-ranked rejection curves and dataset-shift histograms.
//!
//! The [`toylab`] module contains a small synthetic pipeline that trains two
//! dropout MLP encoders with hinge rank losses and produces such stacks.

pub mod error;
pub mod matrix;
pub mod reliability;
pub mod retrieval;
pub mod similarity;
pub mod tensor_io;
pub mod toylab;
pub mod uncertainty;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use reliability::{auprc_gap, rejection_curve, shift_histograms, RejectionCurve, ShiftHistograms};
pub use retrieval::{
    evaluate, feature_average, median_rank, posterior_average, rank_targets, recall_at_k,
    retrieval_posterior, AveragingMode, Metrics, MetricsRow, RankResult, RetrievalTask,
};
pub use similarity::{similarity_matrix, SimilarityKind};
pub use tensor_io::{read_positives, read_tensor, write_positives, write_tensor, EmbeddingTensor, PositivesMap};
pub use uncertainty::{
    entropy, feature_uncertainty, posterior_ensemble, posterior_uncertainty, posterior_variance,
    PosteriorEnsemble, UncertaintyReport,
};

/// Temperatures swept by default.
pub const DEFAULT_TEMPERATURES: [f64; 5] = [0.001, 0.01, 0.1, 1.0, 10.0];
