use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::params::{perturb_counterfeit, uniform, MarkParams, NoiseModel};
use super::render::{render_mark, Backdrop, BackgroundKind};
use crate::affine::AffineParams;
use crate::decision::Label;
use crate::error::{FormatError, SynthError};
use crate::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::raster::{AuthImage, BBox};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const RECORDS_FILE: &str = "records.json";
pub const CONFIG_FILE: &str = "gen.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Ranges for the random pose of the mark on the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Maximum rotation magnitude in degrees.
    pub rotation_deg: f64,
    /// Maximum translation per axis as a fraction of the shorter canvas side.
    pub translate_frac: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            rotation_deg: 20.0,
            translate_frac: 0.1,
            scale_min: 0.8,
            scale_max: 1.2,
        }
    }
}

impl Placement {
    pub fn sample(&self, rng: &mut ChaCha8Rng, canvas_min_side: f64) -> AffineParams {
        let t = self.translate_frac * canvas_min_side;
        AffineParams::similarity(
            uniform(rng, -self.rotation_deg, self.rotation_deg),
            [uniform(rng, -t, t), uniform(rng, -t, t)],
            uniform(rng, self.scale_min, self.scale_max),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_genuine: SplitCounts,
    pub n_counterfeit: SplitCounts,
    /// Counterfeit offset in units of the legitimate-noise sigma of each
    /// perturbed dimension.
    pub severity: f64,
    pub canvas: u32,
    pub placement: Placement,
    pub background: BackgroundKind,
    pub lighting_jitter: f64,
    pub sensor_noise: f64,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        let half = SplitCounts {
            train: 1000,
            val: 400,
            test: 200,
        };
        Self {
            n_genuine: half,
            n_counterfeit: half,
            severity: 4.0,
            canvas: 256,
            placement: Placement::default(),
            background: BackgroundKind::FabricTexture,
            lighting_jitter: 0.15,
            sensor_noise: 2.0,
            noise: NoiseModel::default(),
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        if !(self.severity >= 0.0 && self.severity.is_finite()) {
            return bad("severity must be finite and non-negative");
        }
        let p = &self.placement;
        if !(p.scale_min > 0.0 && p.scale_min <= p.scale_max) {
            return bad("placement scale range must satisfy 0 < min <= max");
        }
        if p.rotation_deg < 0.0 || p.translate_frac < 0.0 {
            return bad("placement magnitudes must be non-negative");
        }
        let n = &self.noise;
        if [n.stroke_width, n.aspect_ratio, n.control_point, n.hue_deg]
            .iter()
            .any(|s| !(*s >= 0.0))
        {
            return bad("noise sigmas must be non-negative");
        }
        self.backdrop().validate()
    }

    pub fn backdrop(&self) -> Backdrop {
        Backdrop {
            width: self.canvas,
            height: self.canvas,
            kind: self.background,
            lighting_jitter: self.lighting_jitter,
            sensor_noise: self.sensor_noise,
        }
    }

    pub fn total(&self) -> usize {
        self.n_genuine.total() + self.n_counterfeit.total()
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: GenConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Label and split of generation slot `i`: splits in train/val/test
    /// order, genuine before counterfeit within each.
    fn slot(&self, mut i: usize) -> (Label, Split) {
        for split in Split::ALL {
            for (label, counts) in [
                (Label::Genuine, &self.n_genuine),
                (Label::Counterfeit, &self.n_counterfeit),
            ] {
                let n = counts.get(split);
                if i < n {
                    return (label, split);
                }
                i -= n;
            }
        }
        unreachable!("slot index within total")
    }
}

/// Ground truth for one generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub image_path: String,
    pub label: Label,
    pub split: Split,
    pub true_bbox: BBox,
    /// Canonical frame -> canvas.
    pub true_transform: AffineParams,
    pub params_used: MarkParams,
    /// [`AuthImage::fingerprint`] of the rendered image.
    pub fingerprint: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub record: SynthRecord,
    pub image: AuthImage,
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of generation slot `index`; a pure function of the config seed and
/// the slot, so records can be generated in any order or in parallel.
pub fn record_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(1)))
}

const PLACEMENT_ATTEMPTS: usize = 64;

/// Generates slot `index` of `cfg`.
pub fn generate_one(cfg: &GenConfig, index: usize, image_path: String) -> Result<SynthSample, SynthError> {
    let (label, split) = cfg.slot(index);
    let seed = record_seed(cfg.seed, index as u64);
    let severity = match label {
        Label::Genuine => 0.0,
        Label::Counterfeit => cfg.severity,
    };
    let params = perturb_counterfeit(&MarkParams::nominal(), &cfg.noise, severity, splitmix64(seed ^ 1));
    let mut place_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 2));
    let backdrop = cfg.backdrop();
    let render_seed = splitmix64(seed ^ 3);
    let mut last = None;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let transform = cfg.placement.sample(&mut place_rng, cfg.canvas as f64);
        match render_mark(&params, &transform, &backdrop, render_seed) {
            Ok(r) => {
                let record = SynthRecord {
                    image_path,
                    label,
                    split,
                    true_bbox: r.true_bbox,
                    true_transform: transform,
                    params_used: params,
                    fingerprint: r.image.fingerprint(),
                    seed,
                };
                return Ok(SynthSample {
                    record,
                    image: r.image,
                });
            }
            Err(e @ SynthError::OutOfFrame { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Lazily generated dataset, yielded in image-path order. File names are a
/// seeded permutation of slots so that names carry no label information.
pub struct SynthStream<'a> {
    cfg: &'a GenConfig,
    slot_of_name: Vec<usize>,
    next: usize,
}

impl<'a> SynthStream<'a> {
    pub fn new(cfg: &'a GenConfig) -> Result<Self, SynthError> {
        cfg.validate()?;
        let mut slot_of_name: Vec<usize> = (0..cfg.total()).collect();
        slot_of_name.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0xA5A5)));
        Ok(Self {
            cfg,
            slot_of_name,
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.slot_of_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot_of_name.is_empty()
    }
}

impl Iterator for SynthStream<'_> {
    type Item = Result<SynthSample, SynthError>;

    fn next(&mut self) -> Option<Self::Item> {
        let name = self.next;
        let slot = *self.slot_of_name.get(name)?;
        self.next += 1;
        Some(generate_one(self.cfg, slot, format!("images/{name:06}.png")))
    }
}

fn manifest_entry(r: &SynthRecord) -> ManifestEntry {
    ManifestEntry {
        path: r.image_path.clone(),
        label: r.label,
        split: r.split,
        source: "synth".into(),
    }
}

/// Writes images, `manifest.csv`, `records.json` and `gen.toml` under `out`.
pub fn generate_dataset(
    cfg: &GenConfig,
    out: &Path,
) -> Result<(DatasetManifest, Vec<SynthRecord>), SynthError> {
    let io = |p: &Path, e: std::io::Error| SynthError::Io {
        path: p.display().to_string(),
        source: e,
    };
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| io(&images, e))?;
    let mut records = Vec::with_capacity(cfg.total());
    for sample in SynthStream::new(cfg)? {
        let sample = sample?;
        let path = out.join(&sample.record.image_path);
        std::fs::write(&path, sample.image.encode_png()).map_err(|e| io(&path, e))?;
        records.push(sample.record);
    }
    let manifest = DatasetManifest::new(records.iter().map(manifest_entry).collect(), cfg.seed)
        .with_root(out);
    manifest.write(&out.join(MANIFEST_FILE))?;
    write_records(&out.join(RECORDS_FILE), &records)?;
    let cfg_path = out.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| io(&cfg_path, e))?;
    Ok((manifest, records))
}

pub fn write_records(path: &Path, records: &[SynthRecord]) -> Result<(), FormatError> {
    let json = serde_json::to_vec_pretty(records).expect("records serialize");
    std::fs::write(path, json).map_err(|e| FormatError::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<SynthRecord>, FormatError> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| FormatError::invalid(path, e))
}
