//! Classifier and aligner training, augmentation, early stopping and the
//! multi-architecture experiment matrix.
//!
//! Images are canonicalized once up front ([`PreparedData`]); epochs then
//! work on the stored crops.

mod aligner;
mod augment;
mod classifier;
mod data;
mod matrix;

pub use aligner::{
    pose_hit_rate, pose_pairs, train_aligner_on, warp_onto_canvas, PosePair, PAIR_CANVAS,
    POSE_ARCHITECTURE, POSE_HIDDEN,
};
pub use augment::{augment, AugConfig};
pub use classifier::{
    artifact_version, early_stopping, train_on, ArtifactMeta, EarlyStopping, EpochRecord,
    ModelArtifact, TrainConfig, TrainLog, LOG_FILE, META_FILE, SCORE_ORIENTATION, WEIGHTS_FILE,
};
pub use data::{score_examples, stages_for, Example, LocalizerChoice, PreparedData};
pub use matrix::{format_matrix, run_architecture, run_matrix, MatrixRow, TABLE_HEADER};

use crate::decision::CostMatrix;
use crate::error::TrainError;
use crate::manifest::DatasetManifest;

fn prepare(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<PreparedData, TrainError> {
    cfg.validate()?;
    let stages = stages_for(cfg.localizer, manifest)?;
    let data = PreparedData::from_manifest(manifest, &stages)?;
    data.require_nonempty()?;
    Ok(data)
}

pub fn train_classifier(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<(ModelArtifact, TrainLog), TrainError> {
    crate::nn::build(&cfg.architecture, cfg.seed)?;
    train_on(&prepare(manifest, cfg)?, cfg)
}

pub fn train_aligner(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<ModelArtifact, TrainError> {
    Ok(train_aligner_on(&prepare(manifest, cfg)?, cfg)?.0)
}

pub fn run_experiment_matrix(
    manifest: &DatasetManifest,
    architectures: &[String],
    cfg: &TrainConfig,
    costs: &CostMatrix,
) -> Result<Vec<MatrixRow>, TrainError> {
    run_matrix(&prepare(manifest, cfg)?, architectures, cfg, costs)
}
