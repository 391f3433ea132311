use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::augment::{augmented_stem, AugConfig};
use super::data::{stems, LocalizerChoice, PreparedData};
use crate::affine::CANONICAL_SIZE;
use crate::error::{FormatError, TrainError};
use crate::nn::{
    bce_with_logits, build, lookup, params_from_bytes, params_to_bytes, sigmoid, Adam, Network,
};
use crate::pipeline::ModelHandle;
use crate::synth::splitmix64;

pub const SCORE_ORIENTATION: &str = "1=genuine";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const META_FILE: &str = "meta.json";
pub const LOG_FILE: &str = "train_log.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub architecture: String,
    pub epochs_max: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub augmentation: AugConfig,
    pub localizer: LocalizerChoice,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: crate::nn::SMALL_CONV.into(),
            epochs_max: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            patience: 5,
            seed: 0,
            augmentation: AugConfig::default(),
            localizer: LocalizerChoice::Template,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs_max < 1 {
            return bad("epochs_max must be at least 1");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        self.augmentation.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain config serializes")
    }
}

/// Validation-loss early stopping. Only strict improvements reset the
/// patience counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    epoch: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            epoch: 0,
            best: None,
        }
    }

    /// Records the next epoch's loss; true when training should stop.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        self.epoch += 1;
        if self.best.is_none_or(|(_, b)| val_loss < b) {
            self.best = Some((self.epoch, val_loss));
        }
        self.epoch - self.best_epoch() >= self.patience
    }

    /// 1-based epoch with the lowest loss so far.
    pub fn best_epoch(&self) -> usize {
        self.best.map_or(0, |(e, _)| e)
    }

    pub fn is_improvement(&self) -> bool {
        self.best_epoch() == self.epoch
    }
}

/// Where a loss sequence stops: `(last_epoch, best_epoch, stopped_early)`,
/// 1-based.
pub fn early_stopping(val_losses: &[f64], patience: usize, epochs_max: usize) -> (usize, usize, bool) {
    let mut es = EarlyStopping::new(patience);
    for (i, &l) in val_losses.iter().take(epochs_max).enumerate() {
        if es.observe(l) {
            return (i + 1, es.best_epoch(), true);
        }
    }
    let last = val_losses.len().min(epochs_max);
    (last, es.best_epoch(), false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub architecture: String,
    pub layer_count: u64,
    pub weight_count: u64,
    pub version: String,
    pub train_seed: u64,
    pub score_orientation: String,
    pub canonical_size: u32,
}

/// Trained weights plus the metadata needed to rebuild the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub weights: Vec<u8>,
    pub meta: ArtifactMeta,
}

/// `{architecture}-s{seed}-{12 hex digits of the weight hash}`.
pub fn artifact_version(architecture: &str, seed: u64, weights: &[u8]) -> String {
    let digest = hex::encode(Sha256::digest(weights));
    format!("{architecture}-s{seed}-{}", &digest[..12])
}

impl ModelArtifact {
    pub fn from_network(net: &Network, seed: u64) -> Self {
        let weights = params_to_bytes(&net.params);
        let meta = ArtifactMeta {
            architecture: net.architecture.clone(),
            layer_count: net.layer_count(),
            weight_count: net.weight_count(),
            version: artifact_version(&net.architecture, seed, &weights),
            train_seed: seed,
            score_orientation: SCORE_ORIENTATION.into(),
            canonical_size: CANONICAL_SIZE,
        };
        Self { weights, meta }
    }

    /// Rebuilds the network, checking the blob against the metadata.
    pub fn network(&self) -> Result<Network, TrainError> {
        let bad = |m: String| TrainError::InvalidConfig(format!("artifact {}: {m}", self.meta.version));
        if self.meta.score_orientation != SCORE_ORIENTATION {
            return Err(bad(format!("unsupported orientation {:?}", self.meta.score_orientation)));
        }
        if self.meta.canonical_size != CANONICAL_SIZE {
            return Err(bad(format!("canonical size {}", self.meta.canonical_size)));
        }
        let mut net = build(&self.meta.architecture, 0)?;
        let params = params_from_bytes(&self.weights).map_err(bad)?;
        if params.len() as u64 != self.meta.weight_count {
            return Err(bad(format!(
                "blob holds {} weights, meta says {}",
                params.len(),
                self.meta.weight_count
            )));
        }
        net.set_params(params).map_err(bad)?;
        Ok(net)
    }

    pub fn handle(&self) -> Result<ModelHandle, TrainError> {
        Ok(ModelHandle::new(self.meta.version.clone(), Arc::new(self.network()?)))
    }

    pub fn save(&self, dir: &Path) -> Result<(), FormatError> {
        std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
        let wp = dir.join(WEIGHTS_FILE);
        std::fs::write(&wp, &self.weights).map_err(|e| FormatError::io(&wp, e))?;
        let mp = dir.join(META_FILE);
        let meta = serde_json::to_string_pretty(&self.meta).expect("plain data serializes");
        std::fs::write(&mp, meta).map_err(|e| FormatError::io(&mp, e))
    }

    pub fn load(dir: &Path) -> Result<Self, FormatError> {
        let wp = dir.join(WEIGHTS_FILE);
        let weights = std::fs::read(&wp).map_err(|e| FormatError::io(&wp, e))?;
        let mp = dir.join(META_FILE);
        let text = std::fs::read_to_string(&mp).map_err(|e| FormatError::io(&mp, e))?;
        let meta = serde_json::from_str(&text).map_err(|e| FormatError::invalid(&mp, e))?;
        Ok(Self { weights, meta })
    }
}

fn val_metrics(net: &Network, val: &[(Vec<f64>, crate::decision::Label)]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, label) in val {
        let z = net.logit(x);
        loss += bce_with_logits(z, label.target());
        if (sigmoid(z) > 0.5) == (label.target() == 1.0) {
            correct += 1;
        }
    }
    let n = val.len() as f64;
    (loss / n, correct as f64 / n)
}

/// Minibatch BCE training with validation-loss early stopping. Returns the
/// best-epoch weights.
pub fn train_on(data: &PreparedData, cfg: &TrainConfig) -> Result<(ModelArtifact, TrainLog), TrainError> {
    cfg.validate()?;
    lookup(&cfg.architecture).ok_or_else(|| TrainError::UnknownArchitecture(cfg.architecture.clone()))?;
    data.require_nonempty()?;
    let mut net = build(&cfg.architecture, cfg.seed)?;
    let train: Vec<_> = data.train.iter().filter(|e| e.mark.is_ok()).collect();
    let val = stems(&data.val);
    let train_stems = cfg
        .augmentation
        .is_identity()
        .then(|| stems(&data.train));

    let mut opt = Adam::new(net.params.len(), cfg.learning_rate);
    let mut es = EarlyStopping::new(cfg.patience);
    let mut best_params = net.params.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; net.params.len()];

    for epoch in 1..=cfg.epochs_max {
        let epoch_seed = splitmix64(cfg.seed ^ splitmix64(epoch as u64));
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let target = train[i].label.target();
                batch_loss += match &train_stems {
                    Some(s) => net.accumulate(&s[i].0, target, &mut grad),
                    None => {
                        let bytes = train[i].mark.as_ref().expect("filtered to usable crops");
                        let x = augmented_stem(bytes, &cfg.augmentation, splitmix64(epoch_seed ^ i as u64));
                        net.accumulate(&x, target, &mut grad)
                    }
                };
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b + 1 });
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            opt.step(&mut net.params, &grad);
            loss_sum += batch_loss;
        }
        let (val_loss, val_accuracy) = val_metrics(&net, &val);
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: 0 });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_accuracy,
        });
        let stop = es.observe(val_loss);
        if es.is_improvement() {
            best_params.clone_from(&net.params);
        }
        if stop {
            stopped_early = true;
            break;
        }
    }
    net.params = best_params;
    let log = TrainLog {
        epochs,
        stopped_early,
        best_epoch: es.best_epoch(),
    };
    Ok((ModelArtifact::from_network(&net, cfg.seed), log))
}
