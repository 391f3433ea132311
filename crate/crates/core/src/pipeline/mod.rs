//! Capture -> score: locate the mark, normalize it into the canonical frame
//! and score it with a versioned classifier.
//!
//! Localizers and aligners are trait objects so implementations can be
//! swapped without touching callers. All stages are read-only over their
//! handles and safe to call concurrently.

mod align;
mod localize;
mod model;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use align::{
    moment_features, pose_from_output, pose_target, reference_moments, GeometricAligner,
    LearnedAligner, Moments, POSE_FEATURES, POSE_OUTPUTS,
};
pub use localize::{OracleLocalizer, TemplateLocalizer, DEFAULT_CONFIDENCE_FLOOR};
pub use model::{ModelHandle, Scorer};

use crate::decision::{decide, RejectReason, ThresholdBand, Verdict};
use crate::error::PipelineError;
use crate::raster::{AlignedMark, AuthImage, BBox, ChromaKey};
use crate::synth::MarkParams;

/// Smallest accepted detection side product (32 x 32 pixels).
pub const MIN_DETECTION_AREA: u64 = 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkDetection {
    pub bbox: BBox,
    pub confidence: f64,
}

pub trait Localizer: Send + Sync {
    fn name(&self) -> &str;
    fn localize(&self, image: &AuthImage) -> Result<MarkDetection, PipelineError>;
}

pub trait Aligner: Send + Sync {
    fn name(&self) -> &str;
    fn align(&self, image: &AuthImage, detection: &MarkDetection) -> Result<AlignedMark, PipelineError>;
}

pub type LocalizerHandle = Arc<dyn Localizer>;
pub type AlignerHandle = Arc<dyn Aligner>;

/// Colour key for the genuine mark's primary colour.
pub fn mark_key() -> ChromaKey {
    ChromaKey::new(MarkParams::nominal().primary_color)
}

/// Runs `localizer` and enforces the detection contract.
pub fn localize_mark(image: &AuthImage, localizer: &dyn Localizer) -> Result<MarkDetection, PipelineError> {
    let mut det = localizer.localize(image)?;
    if !det.bbox.fits_within(image.width(), image.height()) {
        return Err(PipelineError::DegenerateCrop(format!(
            "detection {:?} exceeds the {}x{} image",
            det.bbox,
            image.width(),
            image.height()
        )));
    }
    det.confidence = det.confidence.clamp(0.0, 1.0);
    if det.bbox.area() < MIN_DETECTION_AREA {
        return Err(PipelineError::NoMarkFound {
            confidence: det.confidence,
        });
    }
    Ok(det)
}

pub fn align_mark(
    image: &AuthImage,
    detection: &MarkDetection,
    aligner: &dyn Aligner,
) -> Result<AlignedMark, PipelineError> {
    if !detection.bbox.fits_within(image.width(), image.height()) || detection.bbox.area() == 0 {
        return Err(PipelineError::DegenerateCrop(format!(
            "detection {:?} is not inside the image",
            detection.bbox
        )));
    }
    aligner.align(image, detection)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthScore {
    pub value: f64,
    pub model_version: String,
}

pub fn score_mark(mark: &AlignedMark, model: &ModelHandle) -> Result<AuthScore, PipelineError> {
    let value = model.score(mark)?;
    Ok(AuthScore {
        value,
        model_version: model.version().to_string(),
    })
}

/// Outcome of one authentication. Capture failures leave `score` (and, for
/// a missing mark, `detection`) empty and carry a REJECT verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthResult {
    pub score: Option<AuthScore>,
    pub verdict: Verdict,
    pub detection: Option<MarkDetection>,
    pub model_version: String,
    pub thresholds_version: String,
}

/// The localization and alignment stages together.
#[derive(Clone)]
pub struct Stages {
    pub localizer: LocalizerHandle,
    pub aligner: AlignerHandle,
}

impl Stages {
    pub fn new(localizer: LocalizerHandle, aligner: AlignerHandle) -> Self {
        Self { localizer, aligner }
    }

    /// Template localizer and geometric aligner.
    pub fn standard() -> Self {
        Self::new(
            Arc::new(TemplateLocalizer::default()),
            Arc::new(GeometricAligner::default()),
        )
    }

    pub fn canonicalize(&self, image: &AuthImage) -> Result<(MarkDetection, AlignedMark), PipelineError> {
        let det = localize_mark(image, self.localizer.as_ref())?;
        let mark = align_mark(image, &det, self.aligner.as_ref())?;
        Ok((det, mark))
    }
}

/// localize -> align -> score -> decide.
pub fn authenticate(
    image: &AuthImage,
    model: &ModelHandle,
    band: &ThresholdBand,
    localizer: &dyn Localizer,
    aligner: &dyn Aligner,
) -> Result<AuthResult, PipelineError> {
    model.require_loaded()?;
    let rejected = |reason: RejectReason, detection: Option<MarkDetection>| AuthResult {
        score: None,
        verdict: Verdict::reject(reason),
        detection,
        model_version: model.version().to_string(),
        thresholds_version: band.version.clone(),
    };
    let detection = match localize_mark(image, localizer) {
        Ok(d) => d,
        Err(e) => match e.reject_reason() {
            Some(reason) => return Ok(rejected(reason, None)),
            None => return Err(e),
        },
    };
    let mark = match align_mark(image, &detection, aligner) {
        Ok(m) => m,
        Err(e) => match e.reject_reason() {
            Some(reason) => return Ok(rejected(reason, Some(detection))),
            None => return Err(e),
        },
    };
    let score = score_mark(&mark, model)?;
    Ok(AuthResult {
        verdict: decide(score.value, band),
        score: Some(score),
        detection: Some(detection),
        model_version: model.version().to_string(),
        thresholds_version: band.version.clone(),
    })
}
