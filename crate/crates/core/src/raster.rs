//! Raster types shared by the pipeline: captured images and canonical crops.

use chrono::{DateTime, Utc};
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::affine::{AffineParams, CANONICAL_SIZE};
use crate::error::PipelineError;

/// Smallest accepted capture side.
pub const MIN_IMAGE_SIDE: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Venue {
    Retail,
    Customs,
    Warehouse,
    Outdoor,
    ReturnsFacility,
    Unknown,
}

impl std::str::FromStr for Venue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "retail" => Venue::Retail,
            "customs" => Venue::Customs,
            "warehouse" => Venue::Warehouse,
            "outdoor" => Venue::Outdoor,
            "returns_facility" => Venue::ReturnsFacility,
            "unknown" => Venue::Unknown,
            other => return Err(format!("unknown venue {other:?}")),
        })
    }
}

/// Where and how a photograph was taken. Carried for the audit trail only;
/// nothing in scoring reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureMeta {
    pub device_id: String,
    pub venue: Venue,
    pub captured_at: DateTime<Utc>,
}

/// Axis-aligned pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        debug_assert!(x0 <= x1 && y0 <= y1);
        Self { x0, y0, x1, y1 }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn center(&self) -> [f64; 2] {
        [
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        ]
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0)) as u64;
        let iy = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0)) as u64;
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Grows each side by `margin` pixels, clipped to the frame.
    pub fn expanded(&self, margin: u32, width: u32, height: u32) -> BBox {
        BBox::new(
            self.x0.saturating_sub(margin),
            self.y0.saturating_sub(margin),
            (self.x1 + margin).min(width),
            (self.y1 + margin).min(height),
        )
    }
}

/// A captured photograph.
#[derive(Debug, Clone, PartialEq)]
pub struct AuthImage {
    pixels: RgbImage,
    pub capture_meta: Option<CaptureMeta>,
}

impl AuthImage {
    pub fn new(pixels: RgbImage, capture_meta: Option<CaptureMeta>) -> Result<Self, PipelineError> {
        let (w, h) = pixels.dimensions();
        if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
            return Err(PipelineError::ImageTooSmall {
                width: w,
                height: h,
            });
        }
        Ok(Self {
            pixels,
            capture_meta,
        })
    }

    /// Decodes PNG or JPEG bytes.
    pub fn decode(bytes: &[u8], capture_meta: Option<CaptureMeta>) -> Result<Self, PipelineError> {
        let format = image::guess_format(bytes)
            .map_err(|e| PipelineError::MalformedImage(e.to_string()))?;
        if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
            return Err(PipelineError::MalformedImage(format!(
                "unsupported format {format:?}"
            )));
        }
        let img = image::load_from_memory_with_format(bytes, format)
            .map_err(|e| PipelineError::MalformedImage(e.to_string()))?;
        Self::new(img.to_rgb8(), capture_meta)
    }

    pub fn open(path: &std::path::Path) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::decode(&bytes, None)
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.pixels
            .write_to(&mut out, ImageFormat::Png)
            .expect("png encoding into memory");
        out.into_inner()
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn center(&self) -> [f64; 2] {
        [self.width() as f64 / 2.0, self.height() as f64 / 2.0]
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    /// Content hash of dimensions and pixel data.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width().to_le_bytes());
        h.update(self.height().to_le_bytes());
        h.update(self.pixels.as_raw());
        hex::encode(h.finalize())
    }

    /// Bilinear sample with edge clamping, pixel centres at `i + 0.5`.
    /// Channels in `[0, 1]`.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        sample_bilinear(&self.pixels, x, y)
    }
}

#[inline]
pub(crate) fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> [f32; 3] {
    let w = img.width() as i64;
    let h = img.height() as i64;
    let u = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let v = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = u.floor() as i64;
    let y0 = v.floor() as i64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (u - x0 as f64) as f32;
    let fy = (v - y0 as f64) as f32;
    let raw = img.as_raw();
    let idx = |xx: i64, yy: i64| ((yy * w + xx) * 3) as usize;
    let (i00, i10, i01, i11) = (idx(x0, y0), idx(x1, y0), idx(x0, y1), idx(x1, y1));
    let mut out = [0.0f32; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = raw[i00 + c] as f32 * (1.0 - fx) + raw[i10 + c] as f32 * fx;
        let bot = raw[i01 + c] as f32 * (1.0 - fx) + raw[i11 + c] as f32 * fx;
        *o = ((top * (1.0 - fy) + bot * fy) / 255.0).clamp(0.0, 1.0);
    }
    out
}

/// Canonical 224x224x3 crop, HWC order, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedMark {
    pixels: Vec<f32>,
    pub applied_transform: AffineParams,
}

impl AlignedMark {
    pub const SIDE: usize = CANONICAL_SIZE as usize;
    pub const LEN: usize = Self::SIDE * Self::SIDE * 3;

    pub fn from_pixels(pixels: Vec<f32>, applied_transform: AffineParams) -> Self {
        assert_eq!(pixels.len(), Self::LEN, "canonical crop has fixed size");
        debug_assert!(pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            pixels,
            applied_transform,
        }
    }

    /// Resamples `image` through `transform` (canonical -> image).
    pub fn resample(image: &AuthImage, transform: AffineParams) -> Self {
        let m = transform.to_matrix(image.center());
        let mut pixels = Vec::with_capacity(Self::LEN);
        for row in 0..Self::SIDE {
            let py = row as f64 + 0.5;
            for col in 0..Self::SIDE {
                let (x, y) = m.apply(col as f64 + 0.5, py);
                pixels.extend_from_slice(&image.sample(x, y));
            }
        }
        Self::from_pixels(pixels, transform)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Quantizes back to an 8-bit raster.
    pub fn to_rgb_image(&self) -> RgbImage {
        let raw = self
            .pixels
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        RgbImage::from_raw(CANONICAL_SIZE, CANONICAL_SIZE, raw).expect("canonical size")
    }

    pub fn to_auth_image(&self) -> AuthImage {
        AuthImage::new(self.to_rgb_image(), None).expect("canonical frame exceeds minimum size")
    }
}

/// Soft membership of a pixel in the mark, by projection of its chroma
/// (colour minus grey level) onto the chroma of the mark's reference colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChromaKey {
    direction: [f32; 3],
    offset: f32,
    ramp: f32,
}

impl ChromaKey {
    pub fn new(reference_rgb: [f64; 3]) -> Self {
        let mean = reference_rgb.iter().sum::<f64>() / 3.0;
        let c: Vec<f64> = reference_rgb.iter().map(|v| v - mean).collect();
        let n = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        Self {
            direction: [(c[0] / n) as f32, (c[1] / n) as f32, (c[2] / n) as f32],
            offset: 14.0,
            ramp: 10.0,
        }
    }

    /// Raw chroma projection in 8-bit units.
    #[inline]
    pub fn projection(&self, rgb: [u8; 3]) -> f32 {
        let r = rgb[0] as f32;
        let g = rgb[1] as f32;
        let b = rgb[2] as f32;
        let m = (r + g + b) / 3.0;
        (r - m) * self.direction[0] + (g - m) * self.direction[1] + (b - m) * self.direction[2]
    }

    #[inline]
    pub fn membership(&self, rgb: [u8; 3]) -> f32 {
        ((self.projection(rgb) - self.offset) / self.ramp).clamp(0.0, 1.0)
    }

    /// Membership map over the whole image, row-major.
    pub fn map(&self, image: &RgbImage) -> Vec<f32> {
        image
            .as_raw()
            .chunks_exact(3)
            .map(|p| self.membership([p[0], p[1], p[2]]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_iou() {
        let a = BBox::new(0, 0, 10, 10);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(10, 0, 20, 10)), 0.0);
        assert!((a.iou(&BBox::new(5, 0, 15, 10)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.expanded(3, 12, 100), BBox::new(0, 0, 12, 13));
    }

    #[test]
    fn rejects_tiny_images() {
        let img = RgbImage::new(63, 100);
        assert!(matches!(
            AuthImage::new(img, None),
            Err(PipelineError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(matches!(
            AuthImage::decode(b"definitely not an image", None),
            Err(PipelineError::MalformedImage(_))
        ));
    }

    #[test]
    fn png_round_trip_preserves_pixels() {
        let mut img = RgbImage::new(70, 80);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = image::Rgb([x as u8, y as u8, (x ^ y) as u8]);
        }
        let a = AuthImage::new(img, None).unwrap();
        let b = AuthImage::decode(&a.encode_png(), None).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn identity_resample_of_canonical_image_is_lossless() {
        let mut img = RgbImage::new(224, 224);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = image::Rgb([(x % 251) as u8, (y % 247) as u8, ((x * y) % 253) as u8]);
        }
        let a = AuthImage::new(img.clone(), None).unwrap();
        let mark = AlignedMark::resample(&a, AffineParams::IDENTITY);
        assert_eq!(mark.to_rgb_image(), img);
    }

    #[test]
    fn chroma_key_separates_green_from_neutrals() {
        let key = ChromaKey::new([34.0, 120.0, 70.0]);
        assert_eq!(key.membership([34, 120, 70]), 1.0);
        assert_eq!(key.membership([19, 66, 38]), 1.0);
        assert_eq!(key.membership([128, 128, 128]), 0.0);
        assert_eq!(key.membership([235, 230, 220]), 0.0);
        assert_eq!(key.membership([30, 40, 90]), 0.0);
    }
}
