//! Weakly-supervised temporal anomaly localization.
//!
//! The pipeline consumes pre-extracted per-segment feature sequences, learns
//! per-segment attention coefficients from video-level labels only, and turns
//! the resulting scores into scored temporal proposals.
//!
//! - [`datastore`]: feature files, manifests and synthetic planted-anomaly data
//! - [`model`]: causal conv + attention head + pooled classifier, with exact gradients
//! - [`augment`]: block-sampling view pairs
//! - [`losses`]: classification, sparsity, smoothness and view-alignment terms
//! - [`trainer`]: Adam with a two-phase learning-rate schedule
//! - [`proposals`]: T-CAM, weighted T-CAM, thresholding and interval scoring
//! - [`metrics`]: ROC AUC, average precision and the four-granularity report
//! - [`cli`]: the `tadloc` command-line front end

pub mod augment;
pub mod cli;
pub mod datastore;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod proposals;
pub mod trainer;

pub use augment::{identity_view, make_views, AugmentConfig, ViewPair};
pub use datastore::{
    generate_synthetic, load_manifest, read_features, write_features, write_manifest,
    FeatureSequence, SynthConfig, VideoRecord,
};
pub use error::{Error, Result};
pub use losses::{LossBreakdown, LossWeights};
pub use metrics::{EvalReport, ScoreSource, ScoredSet};
pub use model::{ForwardTrace, ModelConfig, ModelParams};
pub use proposals::{Proposal, ScoreTrace};
pub use trainer::{TrainConfig, TrainLog};
