//! On-disk formats and the synthetic planted-anomaly generator.

mod features;
mod manifest;
mod synth;

pub use features::{
    read_features, write_features, FeatureSequence, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use manifest::{
    load_dataset, load_manifest, write_manifest, VideoRecord, DEFAULT_FRAMES_PER_SEGMENT,
};
pub use synth::{generate_synthetic, write_dataset, SynthConfig};
