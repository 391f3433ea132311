//! Procedural rasterization of the emblem onto a simulated capture.
//!
//! The emblem is a closed Catmull-Rom contour filled with a diagonal stitch
//! pattern and outlined with a darker thread. Each output pixel averages a
//! 3x3 grid of subsamples mapped back into the canonical frame, so geometry
//! is resolved analytically rather than by warping a pre-rendered bitmap.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{MarkParams, SHAPE_RADIUS};
use crate::affine::{Affine2, AffineParams, CANONICAL_CENTER};
use crate::error::SynthError;
use crate::raster::{AuthImage, BBox, MIN_IMAGE_SIDE};

const SAMPLES_PER_SEGMENT: usize = 12;
const SUBSAMPLES: usize = 3;
const CELL: f64 = 4.0;
const STITCH_SPACING: f64 = 3.0;
const STITCH_ROWS: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    FabricTexture,
    Plain,
    Cluttered,
}

impl std::str::FromStr for BackgroundKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fabric_texture" => Ok(Self::FabricTexture),
            "plain" => Ok(Self::Plain),
            "cluttered" => Ok(Self::Cluttered),
            other => Err(format!("unknown background {other:?}")),
        }
    }
}

/// Canvas and capture conditions for one rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Backdrop {
    pub width: u32,
    pub height: u32,
    pub kind: BackgroundKind,
    /// Maximum relative deviation of global gain; half of it bounds the
    /// strength of a linear illumination gradient.
    pub lighting_jitter: f64,
    /// Gaussian sensor noise sigma in 8-bit units.
    pub sensor_noise: f64,
}

impl Backdrop {
    /// Noise-free plain canvas.
    pub fn clean(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            kind: BackgroundKind::Plain,
            lighting_jitter: 0.0,
            sensor_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width < MIN_IMAGE_SIDE || self.height < MIN_IMAGE_SIDE {
            return Err(SynthError::InvalidConfig(format!(
                "canvas must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        if !(0.0..1.0).contains(&self.lighting_jitter) || !(self.sensor_noise >= 0.0) {
            return Err(SynthError::InvalidConfig(
                "lighting_jitter must be in [0, 1) and sensor_noise non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Background colours. None of them has green chroma, so the mark stays
/// separable by colour.
const PALETTE: [[f64; 3]; 6] = [
    [232.0, 232.0, 226.0],
    [150.0, 150.0, 156.0],
    [28.0, 36.0, 86.0],
    [122.0, 32.0, 46.0],
    [34.0, 34.0, 36.0],
    [208.0, 194.0, 170.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Hit {
    None,
    Fill,
    Outline,
}

/// The emblem contour in canonical coordinates with a uniform grid for
/// fast point classification.
pub(crate) struct MarkShape {
    vertices: Vec<[f64; 2]>,
    half_stroke: f64,
    origin: [f64; 2],
    nx: usize,
    ny: usize,
    parity: Vec<bool>,
    offsets: Vec<usize>,
    segments: Vec<u32>,
}

fn catmull_rom(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], t: f64) -> [f64; 2] {
    let t2 = t * t;
    let t3 = t2 * t;
    let mut out = [0.0; 2];
    for k in 0..2 {
        out[k] = 0.5
            * (2.0 * p1[k]
                + (p2[k] - p0[k]) * t
                + (2.0 * p0[k] - 5.0 * p1[k] + 4.0 * p2[k] - p3[k]) * t2
                + (3.0 * p1[k] - p0[k] - 3.0 * p2[k] + p3[k]) * t3);
    }
    out
}

fn seg_dist2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    ex * ex + ey * ey
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    (o1 > 0.0) != (o2 > 0.0) && (o3 > 0.0) != (o4 > 0.0)
}

impl MarkShape {
    pub(crate) fn new(params: &MarkParams) -> Self {
        let sx = SHAPE_RADIUS * params.aspect_ratio.sqrt();
        let sy = SHAPE_RADIUS / params.aspect_ratio.sqrt();
        let ctrl: Vec<[f64; 2]> = params
            .contour_control_points
            .iter()
            .map(|p| [CANONICAL_CENTER[0] + p[0] * sx, CANONICAL_CENTER[1] + p[1] * sy])
            .collect();
        let n = ctrl.len();
        let mut vertices = Vec::with_capacity(n * SAMPLES_PER_SEGMENT);
        for i in 0..n {
            let (p0, p1, p2, p3) = (
                ctrl[(i + n - 1) % n],
                ctrl[i],
                ctrl[(i + 1) % n],
                ctrl[(i + 2) % n],
            );
            for k in 0..SAMPLES_PER_SEGMENT {
                vertices.push(catmull_rom(p0, p1, p2, p3, k as f64 / SAMPLES_PER_SEGMENT as f64));
            }
        }
        let half_stroke = params.stroke_width / 2.0;

        let pad = half_stroke + CELL;
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for v in &vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let origin = [lo[0] - pad, lo[1] - pad];
        let nx = ((hi[0] + pad - origin[0]) / CELL).ceil() as usize;
        let ny = ((hi[1] + pad - origin[1]) / CELL).ceil() as usize;
        let reach = half_stroke + CELL * std::f64::consts::FRAC_1_SQRT_2 + 1e-9;
        let mut shape = MarkShape {
            vertices,
            half_stroke,
            origin,
            nx,
            ny,
            parity: Vec::with_capacity(nx * ny),
            offsets: Vec::with_capacity(nx * ny + 1),
            segments: Vec::new(),
        };
        shape.offsets.push(0);
        for cy in 0..ny {
            for cx in 0..nx {
                let c = shape.cell_center(cx, cy);
                let inside = shape.ray_parity(c);
                shape.parity.push(inside);
                let nv = shape.vertices.len();
                for i in 0..nv {
                    let (a, b) = (shape.vertices[i], shape.vertices[(i + 1) % nv]);
                    if seg_dist2(c, a, b) <= reach * reach {
                        shape.segments.push(i as u32);
                    }
                }
                shape.offsets.push(shape.segments.len());
            }
        }
        shape
    }

    fn cell_center(&self, cx: usize, cy: usize) -> [f64; 2] {
        [
            self.origin[0] + (cx as f64 + 0.5) * CELL,
            self.origin[1] + (cy as f64 + 0.5) * CELL,
        ]
    }

    fn ray_parity(&self, p: [f64; 2]) -> bool {
        let nv = self.vertices.len();
        let mut inside = false;
        for i in 0..nv {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % nv]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if x > p[0] {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Classifies a canonical-frame point.
    pub(crate) fn classify(&self, x: f64, y: f64) -> Hit {
        let fx = (x - self.origin[0]) / CELL;
        let fy = (y - self.origin[1]) / CELL;
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return Hit::None;
        }
        let (cx, cy) = (fx as usize, fy as usize);
        let idx = cy * self.nx + cx;
        let segs = &self.segments[self.offsets[idx]..self.offsets[idx + 1]];
        let p = [x, y];
        let nv = self.vertices.len();
        let r2 = self.half_stroke * self.half_stroke;
        let mut inside = self.parity[idx];
        let c = self.cell_center(cx, cy);
        for &s in segs {
            let (a, b) = (self.vertices[s as usize], self.vertices[(s as usize + 1) % nv]);
            if seg_dist2(p, a, b) <= r2 {
                return Hit::Outline;
            }
            if segments_cross(c, p, a, b) {
                inside = !inside;
            }
        }
        if inside {
            Hit::Fill
        } else {
            Hit::None
        }
    }

    /// Bounds `[xmin, ymin, xmax, ymax]` of the stroked contour after `m`.
    pub(crate) fn extent(&self, m: &Affine2) -> [f64; 4] {
        let rx = self.half_stroke * m.m[0][0].hypot(m.m[0][1]);
        let ry = self.half_stroke * m.m[1][0].hypot(m.m[1][1]);
        let mut e = [f64::MAX, f64::MAX, f64::MIN, f64::MIN];
        for v in &self.vertices {
            let (x, y) = m.apply(v[0], v[1]);
            e[0] = e[0].min(x - rx);
            e[1] = e[1].min(y - ry);
            e[2] = e[2].max(x + rx);
            e[3] = e[3].max(y + ry);
        }
        e
    }
}

/// A rendered capture and the pixel rectangle its mark covers.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: AuthImage,
    pub true_bbox: BBox,
}

fn background(backdrop: &Backdrop, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let (w, h) = (backdrop.width as usize, backdrop.height as usize);
    let base_idx = rng.random_range(0..PALETTE.len());
    let base = PALETTE[base_idx];
    let mut px = vec![base; w * h];
    match backdrop.kind {
        BackgroundKind::Plain => {}
        BackgroundKind::FabricTexture => {
            let fibre = Normal::new(0.0, 4.0).expect("valid sigma");
            let freq = rng.random_range(1.6..2.4);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for y in 0..h {
                for x in 0..w {
                    let weave = 0.5
                        + 0.5 * ((x as f64 * freq + phase).sin() * (y as f64 * freq).sin()).abs();
                    let k = 0.9 + 0.1 * weave;
                    let f = fibre.sample(rng);
                    px[y * w + x] = base.map(|c| c * k + f);
                }
            }
        }
        BackgroundKind::Cluttered => {
            let shapes = rng.random_range(8..15);
            for _ in 0..shapes {
                let mut ci = rng.random_range(0..PALETTE.len() - 1);
                if ci >= base_idx {
                    ci += 1;
                }
                let color = PALETTE[ci];
                let cx = rng.random_range(0.0..w as f64);
                let cy = rng.random_range(0.0..h as f64);
                let rw = rng.random_range(5.0..30.0);
                let rh = rng.random_range(5.0..30.0);
                let disc = rng.random_bool(0.5);
                let (x0, x1) = ((cx - rw).max(0.0) as usize, ((cx + rw) as usize).min(w));
                let (y0, y1) = ((cy - rh).max(0.0) as usize, ((cy + rh) as usize).min(h));
                for y in y0..y1 {
                    for x in x0..x1 {
                        let (dx, dy) = ((x as f64 + 0.5 - cx) / rw, (y as f64 + 0.5 - cy) / rh);
                        if !disc || dx * dx + dy * dy <= 1.0 {
                            px[y * w + x] = color;
                        }
                    }
                }
            }
        }
    }
    px
}

/// Renders `params` into a capture, placing the canonical frame through
/// `transform` (canonical -> canvas, centred on the canvas centre).
pub fn render_mark(
    params: &MarkParams,
    transform: &AffineParams,
    backdrop: &Backdrop,
    seed: u64,
) -> Result<Rendered, SynthError> {
    params.validate()?;
    backdrop.validate()?;
    if !transform.is_valid() {
        return Err(SynthError::InvalidParams(format!("invalid transform {transform:?}")));
    }
    let (w, h) = (backdrop.width, backdrop.height);
    let shape = MarkShape::new(params);
    let m = transform.to_matrix([w as f64 / 2.0, h as f64 / 2.0]);
    let inv = m.inverse().expect("valid transform is invertible");
    let ext = shape.extent(&m);
    if ext[0] < 0.0 || ext[1] < 0.0 || ext[2] > w as f64 || ext[3] > h as f64 {
        return Err(SynthError::OutOfFrame { width: w, height: h });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = background(backdrop, &mut rng);
    let row_jitter: Vec<f64> = if params.stitch_jitter_sigma > 0.0 {
        let n = Normal::new(0.0, params.stitch_jitter_sigma).expect("valid sigma");
        (0..STITCH_ROWS).map(|_| n.sample(&mut rng)).collect()
    } else {
        vec![0.0; STITCH_ROWS]
    };
    let fill = params.primary_color;
    let outline = params.outline_color();
    let stitch = |x: f64, y: f64| -> f64 {
        let u = (x + y) * std::f64::consts::FRAC_1_SQRT_2;
        let row = ((u / STITCH_SPACING).floor().max(0.0) as usize).min(STITCH_ROWS - 1);
        let f = ((u - row_jitter[row]) / STITCH_SPACING).rem_euclid(1.0);
        0.8 + 0.2 * (std::f64::consts::PI * f).sin()
    };

    let (wu, hu) = (w as usize, h as usize);
    let (px0, py0) = (ext[0].floor() as usize, ext[1].floor() as usize);
    let (px1, py1) = ((ext[2].ceil() as usize).min(wu), (ext[3].ceil() as usize).min(hu));
    let mut bbox: Option<BBox> = None;
    let step = 1.0 / SUBSAMPLES as f64;
    for y in py0..py1 {
        for x in px0..px1 {
            let bg = px[y * wu + x];
            let mut acc = [0.0; 3];
            let mut covered = false;
            for sy in 0..SUBSAMPLES {
                for sx in 0..SUBSAMPLES {
                    let ix = x as f64 + (sx as f64 + 0.5) * step;
                    let iy = y as f64 + (sy as f64 + 0.5) * step;
                    let (cx, cy) = inv.apply(ix, iy);
                    let c = match shape.classify(cx, cy) {
                        Hit::None => bg,
                        Hit::Outline => {
                            covered = true;
                            outline
                        }
                        Hit::Fill => {
                            covered = true;
                            let k = stitch(cx, cy);
                            fill.map(|v| v * k)
                        }
                    };
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            if covered {
                let n = (SUBSAMPLES * SUBSAMPLES) as f64;
                px[y * wu + x] = acc.map(|v| v / n);
                let (xu, yu) = (x as u32, y as u32);
                bbox = Some(match bbox {
                    None => BBox::new(xu, yu, xu + 1, yu + 1),
                    Some(b) => BBox::new(b.x0.min(xu), b.y0.min(yu), b.x1.max(xu + 1), b.y1.max(yu + 1)),
                });
            }
        }
    }
    let true_bbox = bbox.ok_or(SynthError::OutOfFrame { width: w, height: h })?;

    let j = backdrop.lighting_jitter;
    let gain = if j > 0.0 { 1.0 + rng.random_range(-j..j) } else { 1.0 };
    let (amp, theta) = if j > 0.0 {
        (
            rng.random_range(0.0..j / 2.0),
            rng.random_range(0.0..std::f64::consts::TAU),
        )
    } else {
        (0.0, 0.0)
    };
    let (gx, gy) = (theta.cos(), theta.sin());
    let span = w.max(h) as f64;
    let noise = (backdrop.sensor_noise > 0.0)
        .then(|| Normal::new(0.0, backdrop.sensor_noise).expect("valid sigma"));
    let mut raw = Vec::with_capacity(wu * hu * 3);
    for y in 0..hu {
        for x in 0..wu {
            let rel = ((x as f64 + 0.5 - w as f64 / 2.0) * gx + (y as f64 + 0.5 - h as f64 / 2.0) * gy) / span;
            let k = gain * (1.0 + 2.0 * amp * rel);
            for c in px[y * wu + x] {
                let mut v = c * k;
                if let Some(n) = &noise {
                    v += n.sample(&mut rng);
                }
                raw.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let img = RgbImage::from_raw(w, h, raw).expect("buffer matches canvas");
    let image = AuthImage::new(img, None).expect("canvas validated above minimum size");
    Ok(Rendered { image, true_bbox })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_render_is_centred_and_bbox_matches_pixels() {
        let p = MarkParams::nominal();
        let r = render_mark(&p, &AffineParams::IDENTITY, &Backdrop::clean(256, 256), 1).unwrap();
        let m = AffineParams::IDENTITY.to_matrix([128.0, 128.0]);
        let e = MarkShape::new(&p).extent(&m);
        let b = r.true_bbox;
        for (got, want) in [(b.x0, e[0]), (b.y0, e[1]), (b.x1, e[2]), (b.y1, e[3])] {
            assert!((got as f64 - want).abs() <= 1.0, "{b:?} vs {e:?}");
        }
        let img = r.image.pixels();
        let bg = *img.get_pixel(0, 0);
        let (mut lo, mut hi) = ([u32::MAX; 2], [0u32; 2]);
        for (x, y, px) in img.enumerate_pixels() {
            if *px != bg {
                lo = [lo[0].min(x), lo[1].min(y)];
                hi = [hi[0].max(x + 1), hi[1].max(y + 1)];
            }
        }
        assert_eq!(BBox::new(lo[0], lo[1], hi[0], hi[1]), r.true_bbox);
    }

    #[test]
    fn rendering_is_deterministic() {
        let p = MarkParams::nominal();
        let t = AffineParams::similarity(12.0, [5.0, -3.0], 0.9);
        let b = Backdrop {
            width: 256,
            height: 256,
            kind: BackgroundKind::FabricTexture,
            lighting_jitter: 0.15,
            sensor_noise: 2.0,
        };
        let a = render_mark(&p, &t, &b, 7).unwrap();
        let c = render_mark(&p, &t, &b, 7).unwrap();
        assert_eq!(a.image.pixels().as_raw(), c.image.pixels().as_raw());
        assert_eq!(a.true_bbox, c.true_bbox);
    }

    #[test]
    fn off_canvas_is_out_of_frame() {
        let p = MarkParams::nominal();
        let t = AffineParams::similarity(0.0, [400.0, 0.0], 1.0);
        assert!(matches!(
            render_mark(&p, &t, &Backdrop::clean(256, 256), 0),
            Err(SynthError::OutOfFrame { .. })
        ));
    }

    #[test]
    fn grid_classification_matches_brute_force() {
        let shape = MarkShape::new(&MarkParams::nominal());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5000 {
            let x = rng.random_range(20.0..204.0);
            let y = rng.random_range(40.0..184.0);
            let nv = shape.vertices.len();
            let near = (0..nv).any(|i| {
                seg_dist2([x, y], shape.vertices[i], shape.vertices[(i + 1) % nv])
                    <= shape.half_stroke * shape.half_stroke
            });
            let want = if near {
                Hit::Outline
            } else if shape.ray_parity([x, y]) {
                Hit::Fill
            } else {
                Hit::None
            };
            assert_eq!(shape.classify(x, y), want, "at ({x}, {y})");
        }
    }
}
