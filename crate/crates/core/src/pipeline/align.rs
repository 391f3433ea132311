//! Pose estimation from colour-weighted image moments.
//!
//! The mark's centroid, principal axis and covariance determinant are
//! compared with those of the nominal design rendered at the identity pose.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{mark_key, Aligner, MarkDetection};
use crate::affine::{wrap_axis_deg, AffineParams, CANONICAL_CENTER, CANONICAL_SIZE};
use crate::error::PipelineError;
use crate::nn::PoseRegressor;
use crate::raster::{AlignedMark, AuthImage, BBox, ChromaKey};
use crate::synth::{render_mark, Backdrop, MarkParams};

pub const POSE_FEATURES: usize = 6;
/// `[rotation / 20, tx / 25, ty / 25, ln(scale) / 0.2]`.
pub const POSE_OUTPUTS: usize = 4;

const ROT_UNIT: f64 = 20.0;
const SHIFT_UNIT: f64 = 25.0;
const LOG_SCALE_UNIT: f64 = 0.2;

/// Membership-weighted zeroth, first and central second moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub centroid: [f64; 2],
    /// `[xx, xy, yy]`.
    pub cov: [f64; 3],
}

impl Moments {
    pub fn of_region(image: &AuthImage, region: BBox, key: &ChromaKey) -> Self {
        let px = image.pixels();
        let (mut m, mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for y in region.y0..region.y1 {
            let fy = y as f64 + 0.5;
            for x in region.x0..region.x1 {
                let w = key.membership(px.get_pixel(x, y).0) as f64;
                if w == 0.0 {
                    continue;
                }
                let fx = x as f64 + 0.5;
                m += w;
                sx += w * fx;
                sy += w * fy;
                sxx += w * fx * fx;
                sxy += w * fx * fy;
                syy += w * fy * fy;
            }
        }
        if m == 0.0 {
            return Self {
                mass: 0.0,
                centroid: region.center(),
                cov: [0.0; 3],
            };
        }
        let (cx, cy) = (sx / m, sy / m);
        Self {
            mass: m,
            centroid: [cx, cy],
            cov: [sxx / m - cx * cx, sxy / m - cx * cy, syy / m - cy * cy],
        }
    }

    /// Direction of the major axis in degrees, in `(-90, 90]`.
    pub fn axis_deg(&self) -> f64 {
        let [xx, xy, yy] = self.cov;
        wrap_axis_deg(0.5 * (2.0 * xy).atan2(xx - yy).to_degrees())
    }

    pub fn det(&self) -> f64 {
        self.cov[0] * self.cov[2] - self.cov[1] * self.cov[1]
    }

    /// Ratio of the covariance eigenvalues, major over minor.
    pub fn elongation(&self) -> f64 {
        let [xx, xy, yy] = self.cov;
        let half_tr = 0.5 * (xx + yy);
        let d = (0.25 * (xx - yy).powi(2) + xy * xy).sqrt();
        (half_tr + d) / (half_tr - d).max(1e-9)
    }
}

/// Moments of the nominal mark at the identity pose in the canonical frame.
pub fn reference_moments() -> &'static Moments {
    static REF: OnceLock<Moments> = OnceLock::new();
    REF.get_or_init(|| {
        let backdrop = Backdrop::clean(CANONICAL_SIZE, CANONICAL_SIZE);
        let r = render_mark(&MarkParams::nominal(), &AffineParams::IDENTITY, &backdrop, 0)
            .expect("nominal mark fits the canonical frame");
        Moments::of_region(&r.image, BBox::full(CANONICAL_SIZE, CANONICAL_SIZE), &mark_key())
    })
}

fn search_region(image: &AuthImage, det: &MarkDetection, margin_frac: f64) -> BBox {
    let side = det.bbox.width().max(det.bbox.height()) as f64;
    let margin = (margin_frac * side).round().max(2.0) as u32;
    det.bbox.expanded(margin, image.width(), image.height())
}

fn observe(image: &AuthImage, det: &MarkDetection, margin_frac: f64, min_mass: f64) -> Result<Moments, PipelineError> {
    let m = Moments::of_region(image, search_region(image, det, margin_frac), &mark_key());
    if m.mass < min_mass || m.det() <= 0.0 {
        return Err(PipelineError::DegenerateCrop(format!(
            "only {:.0} mark pixels inside the detection",
            m.mass
        )));
    }
    Ok(m)
}

/// Checks an estimated pose and resamples the canonical crop through it.
fn finish(image: &AuthImage, pose: AffineParams) -> Result<AlignedMark, PipelineError> {
    if !pose.is_valid() || !(0.2..=5.0).contains(&pose.scale) {
        return Err(PipelineError::DegenerateCrop(format!("implausible pose {pose:?}")));
    }
    let [cx, cy] = image.center();
    let (x, y) = (cx + pose.translation[0], cy + pose.translation[1]);
    if !(0.0..=image.width() as f64).contains(&x) || !(0.0..=image.height() as f64).contains(&y) {
        return Err(PipelineError::DegenerateCrop(format!(
            "pose centre ({x:.1}, {y:.1}) lies outside the image"
        )));
    }
    Ok(AlignedMark::resample(image, pose))
}

/// Closed-form similarity pose from moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricAligner {
    /// Detection box growth, as a fraction of its longer side.
    pub margin_frac: f64,
    /// Minimum total membership inside the region.
    pub min_mass: f64,
}

impl Default for GeometricAligner {
    fn default() -> Self {
        Self {
            margin_frac: 0.15,
            min_mass: 200.0,
        }
    }
}

impl GeometricAligner {
    pub fn estimate(&self, image: &AuthImage, det: &MarkDetection) -> Result<AffineParams, PipelineError> {
        let obs = observe(image, det, self.margin_frac, self.min_mass)?;
        let r = reference_moments();
        let rotation = wrap_axis_deg(obs.axis_deg() - r.axis_deg());
        let scale = (obs.det() / r.det()).powf(0.25);
        Ok(pose_from(image, &obs, rotation, scale))
    }
}

/// Translation placing the reference centroid on the observed one.
fn pose_from(image: &AuthImage, obs: &Moments, rotation: f64, scale: f64) -> AffineParams {
    let r = reference_moments();
    let (s, c) = rotation.to_radians().sin_cos();
    let ox = r.centroid[0] - CANONICAL_CENTER[0];
    let oy = r.centroid[1] - CANONICAL_CENTER[1];
    let [icx, icy] = image.center();
    let tx = obs.centroid[0] - icx - scale * (c * ox - s * oy);
    let ty = obs.centroid[1] - icy - scale * (s * ox + c * oy);
    AffineParams::similarity(rotation, [tx, ty], scale)
}

impl Aligner for GeometricAligner {
    fn name(&self) -> &str {
        "geometric"
    }

    fn align(&self, image: &AuthImage, det: &MarkDetection) -> Result<AlignedMark, PipelineError> {
        finish(image, self.estimate(image, det)?)
    }
}

/// Normalized moment features relative to the reference mark.
pub fn moment_features(image: &AuthImage, det: &MarkDetection) -> Result<[f64; POSE_FEATURES], PipelineError> {
    let g = GeometricAligner::default();
    let obs = observe(image, det, g.margin_frac, g.min_mass)?;
    let r = reference_moments();
    let [icx, icy] = image.center();
    Ok([
        (obs.centroid[0] - icx) / SHIFT_UNIT,
        (obs.centroid[1] - icy) / SHIFT_UNIT,
        wrap_axis_deg(obs.axis_deg() - r.axis_deg()) / ROT_UNIT,
        0.25 * (obs.det() / r.det()).ln() / LOG_SCALE_UNIT,
        0.5 * (obs.mass / r.mass).ln() / LOG_SCALE_UNIT,
        (obs.elongation() / r.elongation()).ln() * 5.0,
    ])
}

/// Regression target for a known pose.
pub fn pose_target(pose: &AffineParams) -> [f64; POSE_OUTPUTS] {
    [
        pose.rotation / ROT_UNIT,
        pose.translation[0] / SHIFT_UNIT,
        pose.translation[1] / SHIFT_UNIT,
        pose.scale.ln() / LOG_SCALE_UNIT,
    ]
}

pub fn pose_from_output(y: &[f64]) -> AffineParams {
    AffineParams::similarity(
        y[0] * ROT_UNIT,
        [y[1] * SHIFT_UNIT, y[2] * SHIFT_UNIT],
        (y[3] * LOG_SCALE_UNIT).exp(),
    )
}

/// Pose regressed from [`moment_features`] by a small trained network.
#[derive(Debug)]
pub struct LearnedAligner {
    pub regressor: PoseRegressor,
}

#[derive(Serialize, Deserialize)]
struct LearnedAlignerFile {
    kind: String,
    hidden: usize,
    params: Vec<f64>,
}

const FILE_KIND: &str = "pose-mlp";

impl LearnedAligner {
    pub fn new(regressor: PoseRegressor) -> Self {
        assert_eq!(regressor.n_in(), POSE_FEATURES);
        assert_eq!(regressor.n_out(), POSE_OUTPUTS);
        Self { regressor }
    }

    pub fn untrained(hidden: usize, seed: u64) -> Self {
        Self::new(PoseRegressor::new(POSE_FEATURES, hidden, POSE_OUTPUTS, seed))
    }

    pub fn estimate(&self, image: &AuthImage, det: &MarkDetection) -> Result<AffineParams, PipelineError> {
        let f = moment_features(image, det)?;
        Ok(pose_from_output(&self.regressor.forward(&f)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&LearnedAlignerFile {
            kind: FILE_KIND.into(),
            hidden: self.regressor.hidden(),
            params: self.regressor.params.clone(),
        })
        .expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let f: LearnedAlignerFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if f.kind != FILE_KIND {
            return Err(format!("expected a {FILE_KIND} file, found {:?}", f.kind));
        }
        let mut reg = PoseRegressor::new(POSE_FEATURES, f.hidden, POSE_OUTPUTS, 0);
        if reg.params.len() != f.params.len() {
            return Err(format!(
                "expected {} weights, found {}",
                reg.params.len(),
                f.params.len()
            ));
        }
        reg.params = f.params;
        Ok(Self::new(reg))
    }
}

impl Aligner for LearnedAligner {
    fn name(&self) -> &str {
        "learned"
    }

    fn align(&self, image: &AuthImage, det: &MarkDetection) -> Result<AlignedMark, PipelineError> {
        finish(image, self.estimate(image, det)?)
    }
}
