use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{AffineParams, CANONICAL_CENTER, CANONICAL_SIZE};
use crate::error::TrainError;
use crate::raster::AlignedMark;

/// Random affine and brightness perturbation of canonical crops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    /// Maximum absolute shift per axis, as a fraction of the frame side.
    pub translate_frac: f64,
    pub scale_range: (f64, f64),
    /// Maximum relative brightness change.
    pub brightness_jitter: f64,
    pub enabled: bool,
}

impl Default for AugConfig {
    /// Small jitter for classifier training; alignment already removes
    /// most pose variation.
    fn default() -> Self {
        Self {
            rotation_deg: 2.0,
            translate_frac: 0.01,
            scale_range: (0.98, 1.02),
            brightness_jitter: 0.1,
            enabled: true,
        }
    }
}

impl AugConfig {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            translate_frac: 0.0,
            scale_range: (1.0, 1.0),
            brightness_jitter: 0.0,
            enabled: true,
        }
    }

    /// The pose ranges the generator places marks with. Used for aligner
    /// training and alignment tolerance checks.
    pub fn placement_ranges() -> Self {
        Self {
            rotation_deg: 20.0,
            translate_frac: 0.1,
            scale_range: (0.8, 1.2),
            brightness_jitter: 0.0,
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let (lo, hi) = self.scale_range;
        let bad = |m: &str| Err(TrainError::InvalidConfig(format!("augmentation: {m}")));
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return bad("scale_range needs 0 < min <= max");
        }
        for (name, v) in [
            ("rotation_deg", self.rotation_deg),
            ("translate_frac", self.translate_frac),
            ("brightness_jitter", self.brightness_jitter),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(&format!("{name} must be a finite magnitude >= 0"));
            }
        }
        if self.brightness_jitter >= 1.0 {
            return bad("brightness_jitter must be below 1");
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        !self.enabled
            || (self.rotation_deg == 0.0
                && self.translate_frac == 0.0
                && self.scale_range == (1.0, 1.0)
                && self.brightness_jitter == 0.0)
    }

    /// A pose drawn uniformly within the configured magnitudes.
    pub fn sample_pose(&self, rng: &mut ChaCha8Rng) -> AffineParams {
        let sym = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let rotation = sym(rng, self.rotation_deg);
        let shift = self.translate_frac * CANONICAL_SIZE as f64;
        let tx = sym(rng, shift);
        let ty = sym(rng, shift);
        let (lo, hi) = self.scale_range;
        let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        AffineParams::similarity(rotation, [tx, ty], scale)
    }
}

/// Bilinear sample of an HWC canonical buffer with edge clamping.
fn sample<T: Copy + Into<f32>>(px: &[T], x: f64, y: f64) -> [f32; 3] {
    let n = AlignedMark::SIDE;
    let u = (x - 0.5).clamp(0.0, (n - 1) as f64);
    let v = (y - 0.5).clamp(0.0, (n - 1) as f64);
    let (x0, y0) = (u as usize, v as usize);
    let (fx, fy) = ((u - x0 as f64) as f32, (v - y0 as f64) as f32);
    let i00 = (y0 * n + x0) * 3;
    let dx = if x0 + 1 < n { 3 } else { 0 };
    let dy = if y0 + 1 < n { 3 * n } else { 0 };
    let quad = &px[i00..i00 + dx + dy + 3];
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let a: f32 = quad[c].into();
        let b: f32 = quad[dx + c].into();
        let d: f32 = quad[dy + c].into();
        let e: f32 = quad[dy + dx + c].into();
        let top = a * (1.0 - fx) + b * fx;
        let bot = d * (1.0 - fx) + e * fx;
        *o = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Label-preserving perturbation of a canonical crop. Deterministic in
/// `(mark, cfg, seed)`; the identity when every magnitude is zero.
pub fn augment(mark: &AlignedMark, cfg: &AugConfig, seed: u64) -> AlignedMark {
    if cfg.is_identity() {
        return mark.clone();
    }
    let mut out = Vec::with_capacity(AlignedMark::LEN);
    warp(mark.pixels(), 1.0, cfg, seed, |_, _, v| out.extend(v));
    AlignedMark::from_pixels(out, mark.applied_transform)
}

/// Visits every output pixel of the augmented crop in row-major order.
fn warp<T: Copy + Into<f32>>(
    src: &[T],
    unit: f32,
    cfg: &AugConfig,
    seed: u64,
    mut visit: impl FnMut(usize, usize, [f32; 3]),
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = cfg.sample_pose(&mut rng);
    let j = cfg.brightness_jitter;
    let gain = if j > 0.0 { rng.random_range(1.0 - j..=1.0 + j) } else { 1.0 } as f32;
    let gain = gain * unit;
    let m = pose.to_matrix(CANONICAL_CENTER);
    for row in 0..AlignedMark::SIDE {
        for col in 0..AlignedMark::SIDE {
            let (x, y) = m.apply(col as f64 + 0.5, row as f64 + 0.5);
            visit(row, col, sample(src, x, y).map(|v| (v * gain).clamp(0.0, 1.0)));
        }
    }
}

/// Network input of an augmented 8-bit crop, without materializing the
/// augmented crop. Matches `stem(&augment(..))` up to rounding.
pub(crate) fn augmented_stem(bytes: &[u8], cfg: &AugConfig, seed: u64) -> Vec<f64> {
    use crate::nn::{INPUT_LEN, STEM_POOL, STEM_SIDE};
    let mut out = vec![0.0; INPUT_LEN];
    let plane = STEM_SIDE * STEM_SIDE;
    warp(bytes, 1.0 / 255.0, cfg, seed, |row, col, v| {
        let cell = (row / STEM_POOL) * STEM_SIDE + col / STEM_POOL;
        for (c, x) in v.into_iter().enumerate() {
            out[c * plane + cell] += x as f64;
        }
    });
    let inv = 1.0 / (STEM_POOL * STEM_POOL) as f64;
    out.iter_mut().for_each(|v| *v = *v * inv - 0.5);
    out
}
