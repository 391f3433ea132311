//! Emblem parameters and their genuine/counterfeit distributions.
//!
//! Genuine articles scatter around a nominal design with per-dimension
//! manufacturing noise. Counterfeits share the same noise but are offset by
//! `severity` noise-sigmas along four fixed dimensions: stroke width, aspect
//! ratio, the radius of one contour control point and the hue of the primary
//! colour. Severity is therefore measured in units of legitimate variation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::SynthError;

/// Canonical-frame radius of a unit control point at aspect ratio 1.
pub const SHAPE_RADIUS: f64 = 48.0;

/// Index of the control point counterfeits displace.
pub const PERTURBED_POINT: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkParams {
    /// Outline width in canonical pixels.
    pub stroke_width: f64,
    /// 8-bit RGB.
    pub primary_color: [f64; 3],
    pub aspect_ratio: f64,
    /// Closed contour in unit shape space, scaled by [`SHAPE_RADIUS`].
    pub contour_control_points: Vec<[f64; 2]>,
    /// Positional jitter of the stitch rows, in canonical pixels.
    pub stitch_jitter_sigma: f64,
}

impl MarkParams {
    /// The genuine design.
    pub fn nominal() -> Self {
        const RADII: [f64; 8] = [1.15, 0.92, 1.0, 0.92, 1.05, 0.85, 0.95, 0.85];
        let contour_control_points = RADII
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let a = (k as f64 * 45.0).to_radians();
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        Self {
            stroke_width: 5.0,
            primary_color: [34.0, 120.0, 70.0],
            aspect_ratio: 1.8,
            contour_control_points,
            stitch_jitter_sigma: 0.6,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.stroke_width > 0.0) {
            return Err(SynthError::InvalidParams("stroke_width must be positive".into()));
        }
        if !(self.aspect_ratio > 0.0) {
            return Err(SynthError::InvalidParams("aspect_ratio must be positive".into()));
        }
        if self.contour_control_points.len() < 6 {
            return Err(SynthError::InvalidParams(
                "at least 6 contour control points".into(),
            ));
        }
        if self.stitch_jitter_sigma < 0.0 {
            return Err(SynthError::InvalidParams("negative stitch jitter".into()));
        }
        Ok(())
    }

    pub fn hue_deg(&self) -> f64 {
        rgb_to_hsv(self.primary_color)[0]
    }

    /// Radius of the displaced control point, in unit shape space.
    pub fn perturbed_radius(&self) -> f64 {
        let [x, y] = self.contour_control_points[PERTURBED_POINT];
        x.hypot(y)
    }

    pub fn outline_color(&self) -> [f64; 3] {
        self.primary_color.map(|c| c * 0.55)
    }
}

/// Standard deviations of legitimate manufacturing variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub stroke_width: f64,
    pub aspect_ratio: f64,
    /// Radial, unit shape space, applied to every control point.
    pub control_point: f64,
    pub hue_deg: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            stroke_width: 0.3,
            aspect_ratio: 0.03,
            control_point: 0.02,
            hue_deg: 2.5,
        }
    }
}

fn add_noise(mut p: MarkParams, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> MarkParams {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    p.stroke_width += noise.stroke_width * std.sample(rng);
    p.aspect_ratio += noise.aspect_ratio * std.sample(rng);
    for pt in &mut p.contour_control_points {
        let r = pt[0].hypot(pt[1]);
        let scale = (r + noise.control_point * std.sample(rng)) / r;
        pt[0] *= scale;
        pt[1] *= scale;
    }
    let dh = noise.hue_deg * std.sample(rng);
    p.primary_color = rotate_hue(p.primary_color, dh);
    p.stroke_width = p.stroke_width.max(0.5);
    p.aspect_ratio = p.aspect_ratio.max(0.1);
    p
}

/// A genuine article drawn around `nominal`.
pub fn sample_genuine(nominal: &MarkParams, noise: &NoiseModel, seed: u64) -> MarkParams {
    perturb_counterfeit(nominal, noise, 0.0, seed)
}

/// A counterfeit of `nominal` at the given severity. Severity 0 is exactly a
/// genuine draw for the same seed.
pub fn perturb_counterfeit(
    nominal: &MarkParams,
    noise: &NoiseModel,
    severity: f64,
    seed: u64,
) -> MarkParams {
    assert!(severity >= 0.0, "severity must be non-negative");
    let mut p = nominal.clone();
    p.stroke_width += severity * noise.stroke_width;
    p.aspect_ratio += severity * noise.aspect_ratio;
    let pt = &mut p.contour_control_points[PERTURBED_POINT];
    let r = pt[0].hypot(pt[1]);
    let k = (r + severity * noise.control_point) / r;
    pt[0] *= k;
    pt[1] *= k;
    p.primary_color = rotate_hue(p.primary_color, severity * noise.hue_deg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise(p, noise, &mut rng)
}

/// Likelihood-ratio classifier on the true generator parameters, used as the
/// best achievable reference for a given severity.
#[derive(Debug, Clone, Copy)]
pub struct BayesOracle {
    pub severity: f64,
    pub noise: NoiseModel,
}

impl BayesOracle {
    /// Sum of standardized offsets along the counterfeit direction.
    pub fn statistic(&self, nominal: &MarkParams, p: &MarkParams) -> f64 {
        let n = &self.noise;
        (p.stroke_width - nominal.stroke_width) / n.stroke_width
            + (p.aspect_ratio - nominal.aspect_ratio) / n.aspect_ratio
            + (p.perturbed_radius() - nominal.perturbed_radius()) / n.control_point
            + hue_delta(nominal.hue_deg(), p.hue_deg()) / n.hue_deg
    }

    /// `true` when `p` is judged counterfeit.
    pub fn is_counterfeit(&self, nominal: &MarkParams, p: &MarkParams) -> bool {
        // Four unit-variance dimensions, each shifted by `severity`: the
        // class means of the statistic are 0 and 4 * severity.
        self.statistic(nominal, p) > 2.0 * self.severity
    }
}

/// Signed hue difference `b - a` in `(-180, 180]`.
pub fn hue_delta(a: f64, b: f64) -> f64 {
    let mut d = (b - a) % 360.0;
    if d <= -180.0 {
        d += 360.0;
    } else if d > 180.0 {
        d -= 360.0;
    }
    d
}

/// `[h (deg), s, v (0..255)]`.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

pub fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub fn rotate_hue(rgb: [f64; 3], degrees: f64) -> [f64; 3] {
    let [h, s, v] = rgb_to_hsv(rgb);
    hsv_to_rgb([h + degrees, s, v])
}

/// Uniform draw helper shared by the generator.
pub(crate) fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}
