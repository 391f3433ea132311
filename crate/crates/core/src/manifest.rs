//! Dataset manifests: which image files belong to which split and label.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decision::Label;
use crate::error::FormatError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest's directory.
    pub path: String,
    pub label: Label,
    pub split: Split,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Not stored in the CSV; files read from disk get 0.
    pub seed: u64,
    /// Directory relative paths resolve against.
    pub root: PathBuf,
}

/// Relative split sizes `train : val : test`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio(pub [f64; 3]);

impl SplitRatio {
    /// Reference corpus proportions: 20,945 / 8,747 / 1,702 images.
    pub const REFERENCE: SplitRatio = SplitRatio([20945.0, 8747.0, 1702.0]);
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self::REFERENCE
    }
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, seed: u64) -> Self {
        Self {
            entries,
            seed,
            root: PathBuf::from("."),
        }
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    /// Shuffles items with `seed` and cuts them at `ratio`. Each split gets
    /// at least one item when there are three or more.
    pub fn assign_splits(
        items: Vec<(String, Label, String)>,
        ratio: SplitRatio,
        seed: u64,
    ) -> Self {
        let mut items = items;
        items.sort();
        items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = items.len();
        let total: f64 = ratio.0.iter().sum();
        let mut n_train = ((ratio.0[0] / total) * n as f64).round() as usize;
        let mut n_val = ((ratio.0[1] / total) * n as f64).round() as usize;
        if n >= 3 {
            n_train = n_train.clamp(1, n - 2);
            n_val = n_val.clamp(1, n - 1 - n_train);
        } else {
            n_train = n_train.min(n);
            n_val = n_val.min(n - n_train);
        }
        let entries = items
            .into_iter()
            .enumerate()
            .map(|(i, (path, label, source))| ManifestEntry {
                path,
                label,
                source,
                split: if i < n_train {
                    Split::Train
                } else if i < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                },
            })
            .collect();
        Self::new(entries, seed)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Every path appears at most once, which keeps splits disjoint.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.path.as_str()) {
                return Err(format!("path {:?} listed more than once", e.path));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.entries.is_empty() {
            w.write_record(["path", "label", "split", "source"])
                .expect("in-memory write");
        }
        for e in &self.entries {
            w.serialize(e).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 fields")
    }

    pub fn parse_csv(text: &str) -> Result<Self, String> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| e.to_string())?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "split", "source"] {
            return Err("header must be path,label,split,source".into());
        }
        let entries = r
            .deserialize()
            .collect::<Result<Vec<ManifestEntry>, _>>()
            .map_err(|e| e.to_string())?;
        let m = Self::new(entries, 0);
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::parse_csv(&text)
            .map_err(|m| FormatError::invalid(path, m))?
            .with_root(root))
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_csv()).map_err(|e| FormatError::io(path, e))
    }
}
