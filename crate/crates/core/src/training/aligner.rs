//! Training the pose regressor behind [`LearnedAligner`].
//!
//! Pairs come from re-warping aligned crops by known poses onto a larger
//! canvas, so the regression target is exact.

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::AugConfig;
use super::classifier::{artifact_version, ArtifactMeta, EarlyStopping, ModelArtifact, TrainConfig, SCORE_ORIENTATION};
use super::data::{Example, PreparedData};
use crate::affine::{AffineParams, PoseTolerance, CANONICAL_SIZE};
use crate::error::TrainError;
use crate::nn::{Adam, PoseRegressor};
use crate::pipeline::{
    localize_mark, moment_features, pose_target, Localizer, LearnedAligner, TemplateLocalizer,
    POSE_FEATURES, POSE_OUTPUTS,
};
use crate::raster::{AlignedMark, AuthImage};
use crate::synth::splitmix64;

pub const POSE_ARCHITECTURE: &str = "pose-mlp";
pub const POSE_HIDDEN: usize = 16;
/// Side of the canvas perturbed crops are drawn onto.
pub const PAIR_CANVAS: u32 = 256;

/// A perturbed capture with its exact pose.
#[derive(Debug, Clone)]
pub struct PosePair {
    pub image: AuthImage,
    pub truth: AffineParams,
}

/// Draws `mark` onto a `canvas` square through `pose` (canonical -> canvas).
pub fn warp_onto_canvas(mark: &AlignedMark, pose: &AffineParams, canvas: u32) -> AuthImage {
    let src = AuthImage::new(mark.to_rgb_image(), None).expect("canonical crop is large enough");
    let c = canvas as f64 / 2.0;
    let inv = pose
        .to_matrix([c, c])
        .inverse()
        .expect("augmentation poses are invertible");
    let img = RgbImage::from_fn(canvas, canvas, |x, y| {
        let (u, v) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
        image::Rgb(src.sample(u, v).map(|f| (f * 255.0).round() as u8))
    });
    AuthImage::new(img, None).expect("canvas exceeds minimum size")
}

/// `per_example` perturbed captures of each usable crop, poses drawn from
/// `ranges`.
pub fn pose_pairs(examples: &[Example], ranges: &AugConfig, per_example: usize, seed: u64) -> Vec<PosePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x9E37));
    let mut out = Vec::new();
    for e in examples {
        let Some(mark) = e.aligned() else { continue };
        for _ in 0..per_example {
            let truth = ranges.sample_pose(&mut rng);
            out.push(PosePair {
                image: warp_onto_canvas(&mark, &truth, PAIR_CANVAS),
                truth,
            });
        }
    }
    out
}

struct Sample {
    x: [f64; POSE_FEATURES],
    y: [f64; POSE_OUTPUTS],
}

fn featurize(pairs: &[PosePair], localizer: &dyn Localizer) -> Vec<Sample> {
    pairs
        .iter()
        .filter_map(|p| {
            let det = localize_mark(&p.image, localizer).ok()?;
            let x = moment_features(&p.image, &det).ok()?;
            Some(Sample {
                x,
                y: pose_target(&p.truth),
            })
        })
        .collect()
}

fn mse(reg: &PoseRegressor, samples: &[Sample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            reg.forward(&s.x)
                .iter()
                .zip(&s.y)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / POSE_OUTPUTS as f64
        })
        .sum::<f64>()
        / samples.len() as f64
}

/// Fraction of `pairs` whose estimated pose meets `tol` against the truth.
/// Pairs the localizer cannot find count as misses.
pub fn pose_hit_rate(
    pairs: &[PosePair],
    localizer: &dyn Localizer,
    estimate: impl Fn(&AuthImage, &crate::pipeline::MarkDetection) -> Option<AffineParams>,
    tol: &PoseTolerance,
) -> f64 {
    let hits = pairs
        .iter()
        .filter(|p| {
            localize_mark(&p.image, localizer)
                .ok()
                .and_then(|d| estimate(&p.image, &d))
                .is_some_and(|est| tol.contains(&est.residual_against(&p.truth, p.image.center())))
        })
        .count();
    hits as f64 / pairs.len().max(1) as f64
}

/// Fits the pose regressor on train-split pairs with validation-loss early
/// stopping. Perturbations are drawn from `cfg.augmentation`.
pub fn train_aligner_on(data: &PreparedData, cfg: &TrainConfig) -> Result<(ModelArtifact, LearnedAligner), TrainError> {
    cfg.validate()?;
    data.require_nonempty()?;
    let localizer = TemplateLocalizer::default();
    let train = featurize(&pose_pairs(&data.train, &cfg.augmentation, 1, cfg.seed), &localizer);
    let val = featurize(&pose_pairs(&data.val, &cfg.augmentation, 1, cfg.seed ^ 1), &localizer);
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    let mut reg = PoseRegressor::new(POSE_FEATURES, POSE_HIDDEN, POSE_OUTPUTS, cfg.seed);
    let mut opt = Adam::new(reg.params.len(), cfg.learning_rate);
    let mut es = EarlyStopping::new(cfg.patience);
    let mut best = reg.params.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; reg.params.len()];
    for epoch in 1..=cfg.epochs_max {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ epoch as u64)));
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in batch {
                loss += reg.accumulate(&train[i].x, &train[i].y, &mut grad);
            }
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b + 1 });
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            opt.step(&mut reg.params, &grad);
        }
        let stop = es.observe(mse(&reg, &val));
        if es.is_improvement() {
            best.clone_from(&reg.params);
        }
        if stop {
            break;
        }
    }
    reg.params = best;
    let aligner = LearnedAligner::new(reg);
    let weights = aligner.to_json().into_bytes();
    let meta = ArtifactMeta {
        architecture: POSE_ARCHITECTURE.into(),
        layer_count: 2,
        weight_count: aligner.regressor.params.len() as u64,
        version: artifact_version(POSE_ARCHITECTURE, cfg.seed, &weights),
        train_seed: cfg.seed,
        score_orientation: SCORE_ORIENTATION.into(),
        canonical_size: CANONICAL_SIZE,
    };
    Ok((ModelArtifact { weights, meta }, aligner))
}

impl ModelArtifact {
    pub fn learned_aligner(&self) -> Result<LearnedAligner, TrainError> {
        if self.meta.architecture != POSE_ARCHITECTURE {
            return Err(TrainError::InvalidConfig(format!(
                "artifact {} is a {} model, not an aligner",
                self.meta.version, self.meta.architecture
            )));
        }
        let text = std::str::from_utf8(&self.weights)
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        LearnedAligner::from_json(text).map_err(TrainError::InvalidConfig)
    }
}
