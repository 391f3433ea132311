use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{mark_key, Localizer, MarkDetection};
use crate::affine::{Affine2, CANONICAL_CENTER};
use crate::error::PipelineError;
use crate::raster::{AuthImage, BBox, ChromaKey};
use crate::synth::render::{Hit, MarkShape};
use crate::synth::{MarkParams, SynthRecord};

pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.3;

/// Side of the coarse membership map along the longer image axis.
const COARSE_SIDE: u32 = 32;
/// Coarse cells a template may overhang the image by.
const SLACK: usize = 2;
const SUBSAMPLES: usize = 4;
const ROTATIONS: [f64; 5] = [-20.0, -10.0, 0.0, 10.0, 20.0];
const SCALE_MIN: f64 = 0.3;
const SCALE_MAX: f64 = 2.25;
const SCALE_STEP: f64 = 1.2;

/// Looks detections up by image fingerprint. Only useful for synthetic data
/// whose ground truth is known.
#[derive(Debug, Clone, Default)]
pub struct OracleLocalizer {
    boxes: HashMap<String, BBox>,
}

impl OracleLocalizer {
    pub fn new(boxes: HashMap<String, BBox>) -> Self {
        Self { boxes }
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a SynthRecord>) -> Self {
        Self::new(
            records
                .into_iter()
                .map(|r| (r.fingerprint.clone(), r.true_bbox))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

impl Localizer for OracleLocalizer {
    fn name(&self) -> &str {
        "oracle"
    }

    fn localize(&self, image: &AuthImage) -> Result<MarkDetection, PipelineError> {
        match self.boxes.get(&image.fingerprint()) {
            Some(&bbox) => Ok(MarkDetection {
                bbox,
                confidence: 1.0,
            }),
            None => Err(PipelineError::NoMarkFound { confidence: 0.0 }),
        }
    }
}

struct Template {
    w: usize,
    h: usize,
    /// Coverage minus its mean.
    vals: Vec<f64>,
    norm: f64,
}

/// Normalized cross-correlation of a coarse colour-membership map against
/// silhouettes of the nominal mark over a grid of scales and rotations,
/// followed by a full-resolution refinement of the best window.
pub struct TemplateLocalizer {
    key: ChromaKey,
    shape: MarkShape,
    pub confidence_floor: f64,
    cache: Mutex<HashMap<u32, Arc<Vec<Template>>>>,
}

impl Default for TemplateLocalizer {
    fn default() -> Self {
        Self::new(DEFAULT_CONFIDENCE_FLOOR)
    }
}

impl std::fmt::Debug for TemplateLocalizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TemplateLocalizer")
            .field("confidence_floor", &self.confidence_floor)
            .finish()
    }
}

impl TemplateLocalizer {
    pub fn new(confidence_floor: f64) -> Self {
        Self {
            key: mark_key(),
            shape: MarkShape::new(&MarkParams::nominal()),
            confidence_floor,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn templates(&self, factor: u32) -> Arc<Vec<Template>> {
        let mut cache = self.cache.lock().expect("template cache poisoned");
        cache
            .entry(factor)
            .or_insert_with(|| Arc::new(self.build_templates(factor)))
            .clone()
    }

    fn build_templates(&self, factor: u32) -> Vec<Template> {
        let mut out = Vec::new();
        let mut scale = SCALE_MIN;
        while scale <= SCALE_MAX + 1e-9 {
            for rot in ROTATIONS {
                if let Some(t) = self.template(scale / factor as f64, rot) {
                    out.push(t);
                }
            }
            scale *= SCALE_STEP;
        }
        out
    }

    /// Silhouette with a one-cell empty ring, at `k` coarse cells per
    /// canonical pixel.
    fn template(&self, k: f64, rot_deg: f64) -> Option<Template> {
        let (s, c) = rot_deg.to_radians().sin_cos();
        let l = [[k * c, -k * s], [k * s, k * c]];
        let [cx, cy] = CANONICAL_CENTER;
        let centred = Affine2 {
            m: [
                [l[0][0], l[0][1], -(l[0][0] * cx + l[0][1] * cy)],
                [l[1][0], l[1][1], -(l[1][0] * cx + l[1][1] * cy)],
            ],
        };
        let e = self.shape.extent(&centred);
        let (ox, oy) = (e[0].floor() - 1.0, e[1].floor() - 1.0);
        let w = (e[2].ceil() - ox) as usize + 1;
        let h = (e[3].ceil() - oy) as usize + 1;
        if w < 4 || h < 3 {
            return None;
        }
        let mut m = centred;
        m.m[0][2] -= ox;
        m.m[1][2] -= oy;
        let inv = m.inverse()?;
        let step = 1.0 / SUBSAMPLES as f64;
        let mut vals = vec![0.0; w * h];
        for j in 0..h {
            for i in 0..w {
                let mut hits = 0;
                for sy in 0..SUBSAMPLES {
                    for sx in 0..SUBSAMPLES {
                        let (px, py) = inv.apply(
                            i as f64 + (sx as f64 + 0.5) * step,
                            j as f64 + (sy as f64 + 0.5) * step,
                        );
                        if self.shape.classify(px, py) != Hit::None {
                            hits += 1;
                        }
                    }
                }
                vals[j * w + i] = hits as f64 / (SUBSAMPLES * SUBSAMPLES) as f64;
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter_mut().for_each(|v| *v -= mean);
        let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        (norm > 1e-9).then_some(Template { w, h, vals, norm })
    }
}

/// Block-averaged membership, zero-padded by [`SLACK`] cells on each side.
fn coarse_map(image: &AuthImage, key: &ChromaKey, factor: u32) -> (Vec<f64>, usize, usize) {
    let (w, h) = (image.width(), image.height());
    let cw = w.div_ceil(factor) as usize;
    let ch = h.div_ceil(factor) as usize;
    let (pw, ph) = (cw + 2 * SLACK, ch + 2 * SLACK);
    let mut sum = vec![0.0; pw * ph];
    let mut count = vec![0u32; pw * ph];
    let f = factor as usize;
    for (x, y, p) in image.pixels().enumerate_pixels() {
        let idx = (y as usize / f + SLACK) * pw + x as usize / f + SLACK;
        sum[idx] += key.membership(p.0) as f64;
        count[idx] += 1;
    }
    for (s, &n) in sum.iter_mut().zip(&count) {
        if n > 0 {
            *s /= n as f64;
        }
    }
    (sum, pw, ph)
}

/// Summed-area table with a leading zero row and column.
fn integral(v: &[f64], w: usize, h: usize, square: bool) -> Vec<f64> {
    let mut out = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            let a = v[y * w + x];
            row += if square { a * a } else { a };
            out[(y + 1) * (w + 1) + x + 1] = out[y * (w + 1) + x + 1] + row;
        }
    }
    out
}

fn window_sum(table: &[f64], w: usize, x: usize, y: usize, tw: usize, th: usize) -> f64 {
    let s = w + 1;
    table[(y + th) * s + x + tw] - table[y * s + x + tw] - table[(y + th) * s + x] + table[y * s + x]
}

impl Localizer for TemplateLocalizer {
    fn name(&self) -> &str {
        "template"
    }

    fn localize(&self, image: &AuthImage) -> Result<MarkDetection, PipelineError> {
        let (w, h) = (image.width(), image.height());
        let factor = w.max(h).div_ceil(COARSE_SIDE).max(1);
        let (map, pw, ph) = coarse_map(image, &self.key, factor);
        let s1 = integral(&map, pw, ph, false);
        let s2 = integral(&map, pw, ph, true);

        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for t in self.templates(factor).iter() {
            if t.w > pw || t.h > ph {
                continue;
            }
            let n = (t.w * t.h) as f64;
            for oy in 0..=ph - t.h {
                for ox in 0..=pw - t.w {
                    let sum = window_sum(&s1, pw, ox, oy, t.w, t.h);
                    let var = window_sum(&s2, pw, ox, oy, t.w, t.h) - sum * sum / n;
                    if var < 1e-6 {
                        continue;
                    }
                    let mut dot = 0.0;
                    for j in 0..t.h {
                        let row = &map[(oy + j) * pw + ox..(oy + j) * pw + ox + t.w];
                        let tr = &t.vals[j * t.w..(j + 1) * t.w];
                        dot += row.iter().zip(tr).map(|(a, b)| a * b).sum::<f64>();
                    }
                    let ncc = dot / (t.norm * var.sqrt());
                    if best.is_none_or(|b| ncc > b.0) {
                        best = Some((ncc, ox, oy, t.w, t.h));
                    }
                }
            }
        }
        let Some((ncc, ox, oy, tw, th)) = best else {
            return Err(PipelineError::NoMarkFound { confidence: 0.0 });
        };
        let confidence = ncc.clamp(0.0, 1.0);
        if confidence < self.confidence_floor {
            return Err(PipelineError::NoMarkFound { confidence });
        }

        // Window in image pixels, grown by a quarter on each side.
        let f = factor as i64;
        let (gx, gy) = (tw as i64 * f / 4, th as i64 * f / 4);
        let x0 = ((ox as i64 - SLACK as i64) * f - gx).clamp(0, w as i64) as u32;
        let y0 = ((oy as i64 - SLACK as i64) * f - gy).clamp(0, h as i64) as u32;
        let x1 = ((ox as i64 - SLACK as i64 + tw as i64) * f + gx).clamp(0, w as i64) as u32;
        let y1 = ((oy as i64 - SLACK as i64 + th as i64) * f + gy).clamp(0, h as i64) as u32;
        let window = BBox::new(x0, y0, x1.max(x0), y1.max(y0));

        let px = image.pixels();
        let mut tight: Option<BBox> = None;
        let mut hits = 0usize;
        for y in window.y0..window.y1 {
            for x in window.x0..window.x1 {
                if self.key.membership(px.get_pixel(x, y).0) >= 0.5 {
                    hits += 1;
                    tight = Some(match tight {
                        None => BBox::new(x, y, x + 1, y + 1),
                        Some(b) => BBox::new(b.x0.min(x), b.y0.min(y), b.x1.max(x + 1), b.y1.max(y + 1)),
                    });
                }
            }
        }
        let bbox = match tight {
            Some(b) if hits >= 16 => b,
            _ => window,
        };
        Ok(MarkDetection { bbox, confidence })
    }
}
