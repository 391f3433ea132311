use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::affine::AffineParams;
use crate::decision::{Label, RejectReason, ScoredSet};
use crate::error::{PipelineError, TrainError};
use crate::manifest::{DatasetManifest, Split};
use crate::nn::stem;
use crate::pipeline::{GeometricAligner, ModelHandle, OracleLocalizer, Stages, TemplateLocalizer};
use crate::raster::{AlignedMark, AuthImage};
use crate::synth::{read_records, GenConfig, SynthStream, RECORDS_FILE};

/// Which localizer canonicalizes training images.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalizerChoice {
    #[default]
    Template,
    /// Ground-truth boxes from the generator's `records.json` beside the
    /// manifest.
    Oracle,
}

impl std::str::FromStr for LocalizerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "template" => Ok(Self::Template),
            "oracle" => Ok(Self::Oracle),
            other => Err(format!("unknown localizer {other:?} (template, oracle)")),
        }
    }
}

/// Pipeline stages for `choice`, reading generator records if needed.
pub fn stages_for(choice: LocalizerChoice, manifest: &DatasetManifest) -> Result<Stages, TrainError> {
    let aligner = Arc::new(GeometricAligner::default());
    Ok(match choice {
        LocalizerChoice::Template => Stages::new(Arc::new(TemplateLocalizer::default()), aligner),
        LocalizerChoice::Oracle => {
            let records = read_records(&manifest.root.join(RECORDS_FILE))?;
            Stages::new(Arc::new(OracleLocalizer::from_records(&records)), aligner)
        }
    })
}

/// One image after localization and alignment, kept as an 8-bit crop.
#[derive(Debug, Clone)]
pub struct Example {
    pub path: String,
    pub label: Label,
    pub mark: Result<Vec<u8>, RejectReason>,
}

impl Example {
    pub fn from_image(path: String, label: Label, image: &AuthImage, stages: &Stages) -> Result<Self, PipelineError> {
        let mark = match stages.canonicalize(image) {
            Ok((_, m)) => Ok(m.to_rgb_image().into_raw()),
            Err(e) => Err(e.reject_reason().ok_or(e)?),
        };
        Ok(Self { path, label, mark })
    }

    pub fn aligned(&self) -> Option<AlignedMark> {
        let bytes = self.mark.as_ref().ok()?;
        Some(AlignedMark::from_pixels(
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
            AffineParams::IDENTITY,
        ))
    }
}

/// Canonical crops for every split.
#[derive(Debug, Clone, Default)]
pub struct PreparedData {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl PreparedData {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn push(&mut self, split: Split, example: Example) {
        match split {
            Split::Train => self.train.push(example),
            Split::Val => self.val.push(example),
            Split::Test => self.test.push(example),
        }
    }

    pub fn from_manifest(manifest: &DatasetManifest, stages: &Stages) -> Result<Self, TrainError> {
        manifest.validate().map_err(TrainError::InvalidConfig)?;
        let mut out = Self::default();
        for e in &manifest.entries {
            let image = AuthImage::open(&manifest.resolve(e))?;
            out.push(e.split, Example::from_image(e.path.clone(), e.label, &image, stages)?);
        }
        Ok(out)
    }

    /// Generates `cfg` in memory and canonicalizes every image, without
    /// touching the filesystem.
    pub fn from_synth(cfg: &GenConfig, stages: &Stages) -> Result<Self, TrainError> {
        let mut out = Self::default();
        for sample in SynthStream::new(cfg)? {
            let s = sample?;
            let r = s.record;
            out.push(r.split, Example::from_image(r.image_path, r.label, &s.image, stages)?);
        }
        Ok(out)
    }

    /// Fails on the first split without usable crops.
    pub fn require_nonempty(&self) -> Result<(), TrainError> {
        for s in Split::ALL {
            if !self.split(s).iter().any(|e| e.mark.is_ok()) {
                return Err(TrainError::EmptySplit(s.as_str()));
            }
        }
        Ok(())
    }

    pub fn capture_rejects(&self, split: Split) -> u64 {
        self.split(split).iter().filter(|e| e.mark.is_err()).count() as u64
    }
}

/// Stem inputs and labels of the usable examples.
pub(crate) fn stems(examples: &[Example]) -> Vec<(Vec<f64>, Label)> {
    examples
        .iter()
        .filter_map(|e| e.aligned().map(|m| (stem(&m), e.label)))
        .collect()
}

/// Scores every usable example; capture failures are left out.
pub fn score_examples(model: &ModelHandle, examples: &[Example]) -> Result<ScoredSet, TrainError> {
    let mut pairs = Vec::with_capacity(examples.len());
    for e in examples {
        if let Some(m) = e.aligned() {
            pairs.push((model.score(&m)?, e.label));
        }
    }
    Ok(ScoredSet::from_pairs(pairs)?)
}
