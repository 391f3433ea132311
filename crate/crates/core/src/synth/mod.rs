//! Synthetic genuine and counterfeit emblem captures with exact ground truth.
//!
//! Images are produced from [`MarkParams`] drawn around a nominal design
//! (see [`params`]), rendered at a random pose over a simulated background
//! ([`render`]) and written with per-image metadata ([`dataset`]).

pub mod dataset;
pub mod params;
pub mod render;

pub use dataset::{
    generate_dataset, generate_one, read_records, record_seed, splitmix64, write_records,
    GenConfig, Placement, SplitCounts, SynthRecord, SynthSample, SynthStream, CONFIG_FILE,
    MANIFEST_FILE, RECORDS_FILE,
};
pub use params::{
    hue_delta, perturb_counterfeit, sample_genuine, BayesOracle, MarkParams, NoiseModel,
};
pub use render::{render_mark, Backdrop, BackgroundKind, Rendered};
