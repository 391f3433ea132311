//! Service state: the active snapshot, the audit logs and the registry.
//!
//! A request reads the snapshot once and runs entirely under it. Activation
//! and recalibration hold the configuration lock, append a [`ConfigRecord`]
//! and only then publish the new snapshot, so every version pair a request
//! can observe is already in the config log.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::Utc;
use markguard_core::decision::{
    calibrate_band, tradeoff_curve, CostMatrix, Label, ThresholdBand, TradeoffCurve,
};
use markguard_core::manifest::{DatasetManifest, ManifestEntry, Split};
use markguard_core::pipeline::{self, Stages};
use markguard_core::raster::{AuthImage, CaptureMeta};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::ledger::{Counters, Ledger};
use crate::records::{AuthRequestRecord, ConfigRecord, FeedbackRecord};
use crate::registry::{ModelListing, ModelRegistry, RegisteredModel};
use crate::store::{self, JsonlLog, CONFIG_LOG, FEEDBACK_LOG, IMAGES_DIR, REQUESTS_LOG};

pub const DEFAULT_PAYLOAD_LIMIT: usize = 10 * 1024 * 1024;

/// Budgets used by `GET /v1/tradeoff` when none are given.
pub const DEFAULT_BUDGETS: [f64; 9] = [0.0, 0.01, 0.02, 0.03, 0.05, 0.1, 0.15, 0.2, 0.3];

pub const FEEDBACK_SOURCE: &str = "feedback";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub artifact_dir: PathBuf,
    pub store_dir: PathBuf,
    pub payload_limit: usize,
    /// Activated at startup, overriding whatever the config log restores.
    pub initial_model: Option<String>,
    /// Costs used when a model is activated without explicit costs.
    pub costs: CostMatrix,
}

impl ServiceConfig {
    pub fn new(artifact_dir: impl Into<PathBuf>, store_dir: impl Into<PathBuf>) -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            artifact_dir: artifact_dir.into(),
            store_dir: store_dir.into(),
            payload_limit: DEFAULT_PAYLOAD_LIMIT,
            initial_model: None,
            costs: CostMatrix {
                cost_false_genuine: 1.0,
                cost_false_counterfeit: 1.0,
                cost_reject: 0.5,
            },
        }
    }
}

/// The (model, band) pair every request runs under.
pub struct Snapshot {
    pub config_version: u64,
    pub model: Option<Arc<RegisteredModel>>,
    pub band: ThresholdBand,
    pub costs: CostMatrix,
}

impl Snapshot {
    pub fn model_version(&self) -> Option<&str> {
        self.model.as_ref().map(|m| m.meta.version.as_str())
    }

    pub fn info(&self) -> SnapshotInfo {
        SnapshotInfo {
            config_version: self.config_version,
            model_version: self.model_version().map(str::to_string),
            band: self.band.clone(),
            costs: self.costs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotInfo {
    pub config_version: u64,
    pub model_version: Option<String>,
    pub band: ThresholdBand,
    pub costs: CostMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub counters: Counters,
    /// `None` before the first request.
    pub rejection_rate: Option<f64>,
    /// `None` until a labeled request has a non-REJECT verdict.
    pub agreement: Option<f64>,
    pub active_model_version: Option<String>,
    pub active_thresholds_version: Option<String>,
    pub config_version: u64,
}

impl Metrics {
    fn new(counters: Counters, snap: &Snapshot) -> Self {
        let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
        Self {
            counters,
            rejection_rate: ratio(counters.rejected, counters.requests),
            agreement: ratio(counters.agreeing, counters.compared),
            active_model_version: snap.model_version().map(str::to_string),
            active_thresholds_version: snap.model.as_ref().map(|_| snap.band.version.clone()),
            config_version: snap.config_version,
        }
    }
}

struct Logs {
    requests: JsonlLog<AuthRequestRecord>,
    feedback: JsonlLog<FeedbackRecord>,
    ledger: Ledger,
}

pub struct Service {
    config: ServiceConfig,
    stages: Stages,
    registry: RwLock<ModelRegistry>,
    snapshot: RwLock<Arc<Snapshot>>,
    /// Serializes configuration changes and owns the config log.
    config_log: Mutex<JsonlLog<ConfigRecord>>,
    logs: Mutex<Logs>,
}

impl Service {
    /// Opens the store, replays the logs and restores the last installed
    /// configuration.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let registry = ModelRegistry::scan(&config.artifact_dir)?;
        Self::with_registry(config, registry)
    }

    pub fn with_registry(config: ServiceConfig, registry: ModelRegistry) -> Result<Self, ServiceError> {
        config
            .costs
            .validate()
            .map_err(|e| ServiceError::InvalidCosts(e.to_string()))?;
        std::fs::create_dir_all(config.store_dir.join(IMAGES_DIR))?;
        let dir = &config.store_dir;
        let requests = JsonlLog::read_all(&dir.join(REQUESTS_LOG))?;
        let feedback = JsonlLog::read_all(&dir.join(FEEDBACK_LOG))?;
        let configs: Vec<ConfigRecord> = JsonlLog::read_all(&dir.join(CONFIG_LOG))?;
        let ledger = Ledger::replay(&requests, &feedback);

        let mut snap = Snapshot {
            config_version: configs.last().map_or(0, |c| c.config_version),
            model: None,
            band: ThresholdBand::single(0.5).expect("0.5 is a valid threshold"),
            costs: config.costs,
        };
        if let Some(last) = configs.last() {
            match registry.get(&last.model_version) {
                Some(model) => {
                    snap.model = Some(model);
                    snap.band = last.band.clone();
                    snap.costs = last.costs;
                }
                None => tracing::warn!("model {} from the config log is not in the registry", last.model_version),
            }
        }

        let svc = Self {
            stages: Stages::standard(),
            registry: RwLock::new(registry),
            snapshot: RwLock::new(Arc::new(snap)),
            config_log: Mutex::new(JsonlLog::open(dir.join(CONFIG_LOG))?),
            logs: Mutex::new(Logs {
                requests: JsonlLog::open(dir.join(REQUESTS_LOG))?,
                feedback: JsonlLog::open(dir.join(FEEDBACK_LOG))?,
                ledger,
            }),
            config,
        };
        if let Some(v) = svc.config.initial_model.clone() {
            if svc.snapshot().model_version() != Some(v.as_str()) {
                svc.activate(&v)?;
            }
        }
        Ok(svc)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn register(&self, model: RegisteredModel) {
        self.registry.write().unwrap_or_else(|e| e.into_inner()).insert(model);
    }

    pub fn models(&self) -> Vec<ModelListing> {
        let snap = self.snapshot();
        self.registry
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .listing(snap.model_version())
    }

    fn lookup(&self, version: &str) -> Result<Arc<RegisteredModel>, ServiceError> {
        if let Some(m) = self.registry.read().unwrap_or_else(|e| e.into_inner()).get(version) {
            return Ok(m);
        }
        // Artifacts written after startup.
        let scanned = ModelRegistry::scan(&self.config.artifact_dir)?;
        let found = scanned.get(version);
        if let Some(m) = &found {
            let mut reg = self.registry.write().unwrap_or_else(|e| e.into_inner());
            if reg.get(version).is_none() {
                reg.insert_shared(m.clone());
            }
        }
        found.ok_or_else(|| ServiceError::UnknownModel(version.to_string()))
    }

    fn install(
        &self,
        log: &mut JsonlLog<ConfigRecord>,
        model: Arc<RegisteredModel>,
        band: ThresholdBand,
        costs: CostMatrix,
        cause: &str,
    ) -> Result<SnapshotInfo, ServiceError> {
        let config_version = self.snapshot().config_version + 1;
        log.append(&ConfigRecord {
            config_version,
            model_version: model.meta.version.clone(),
            band: band.clone(),
            costs,
            installed_at: Utc::now(),
            cause: cause.to_string(),
        })?;
        let snap = Arc::new(Snapshot {
            config_version,
            model: Some(model),
            band,
            costs,
        });
        let info = snap.info();
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = snap;
        tracing::info!(config_version, cause, "installed configuration");
        Ok(info)
    }

    /// Makes `version` the active model. With a validation set the band is
    /// calibrated under the current costs; without one it is the single
    /// threshold 0.5.
    pub fn activate(&self, version: &str) -> Result<SnapshotInfo, ServiceError> {
        let model = self.lookup(version)?;
        let mut log = self.config_log.lock().unwrap_or_else(|e| e.into_inner());
        let costs = self.snapshot().costs;
        let band = match &model.validation {
            Some(val) => {
                calibrate_band(val, &costs)
                    .map_err(|e| ServiceError::Internal(e.to_string()))?
                    .band
            }
            None => ThresholdBand::single(0.5).expect("0.5 is a valid threshold"),
        };
        self.install(&mut log, model, band, costs, "activate")
    }

    /// Calibrates a band for the active model's validation set under
    /// `costs` and installs it.
    pub fn recalibrate(&self, costs: CostMatrix) -> Result<ThresholdBand, ServiceError> {
        costs
            .validate()
            .map_err(|e| ServiceError::InvalidCosts(e.to_string()))?;
        let mut log = self.config_log.lock().unwrap_or_else(|e| e.into_inner());
        let model = self.snapshot().model.clone().ok_or(ServiceError::NoActiveModel)?;
        let val = model
            .validation
            .clone()
            .ok_or_else(|| ServiceError::NoValidationSet(model.meta.version.clone()))?;
        let band = calibrate_band(&val, &costs)
            .map_err(|e| ServiceError::Internal(e.to_string()))?
            .band;
        self.install(&mut log, model, band.clone(), costs, "recalibrate")?;
        Ok(band)
    }

    pub fn tradeoff(&self, budgets: &[f64]) -> Result<TradeoffCurve, ServiceError> {
        let snap = self.snapshot();
        let model = snap.model.as_ref().ok_or(ServiceError::NoActiveModel)?;
        let val = model
            .validation
            .as_ref()
            .ok_or_else(|| ServiceError::NoValidationSet(model.meta.version.clone()))?;
        tradeoff_curve(val, budgets).map_err(|e| ServiceError::BadRequest(e.to_string()))
    }

    /// Scores one submission under the current snapshot and appends the
    /// record to the request log.
    pub fn authenticate(&self, bytes: &[u8], meta: Option<CaptureMeta>) -> Result<AuthRequestRecord, ServiceError> {
        let received_at = Utc::now();
        if bytes.len() > self.config.payload_limit {
            return Err(ServiceError::PayloadTooLarge {
                limit: self.config.payload_limit,
            });
        }
        let image = AuthImage::decode(bytes, meta.clone())?;
        let snap = self.snapshot();
        let model = snap.model.as_ref().ok_or(ServiceError::NoActiveModel)?;
        let result = pipeline::authenticate(
            &image,
            &model.handle,
            &snap.band,
            self.stages.localizer.as_ref(),
            self.stages.aligner.as_ref(),
        )?;
        let image_sha256 = store::sha256_hex(bytes);
        let image_path = store::store_image(&self.config.store_dir, &image_sha256, bytes)?;
        let record = AuthRequestRecord {
            request_id: uuid::Uuid::new_v4().to_string(),
            received_at,
            capture_meta: meta,
            model_version: result.model_version.clone(),
            thresholds_version: result.thresholds_version.clone(),
            result,
            config_version: snap.config_version,
            image_sha256,
            image_path,
        };
        let mut logs = self.logs.lock().unwrap_or_else(|e| e.into_inner());
        logs.requests.append(&record)?;
        logs.ledger.apply_request(&record);
        Ok(record)
    }

    pub fn record_feedback(
        &self,
        request_id: &str,
        expert_label: &str,
        submitter: &str,
    ) -> Result<FeedbackRecord, ServiceError> {
        let label: Label = expert_label
            .parse()
            .map_err(|_| ServiceError::MalformedLabel(expert_label.to_string()))?;
        let mut logs = self.logs.lock().unwrap_or_else(|e| e.into_inner());
        if !logs.ledger.contains(request_id) {
            return Err(ServiceError::UnknownRequest(request_id.to_string()));
        }
        let record = FeedbackRecord {
            request_id: request_id.to_string(),
            expert_label: label,
            submitted_at: Utc::now(),
            submitter: submitter.to_string(),
        };
        logs.feedback.append(&record)?;
        logs.ledger.apply_feedback(&record);
        Ok(record)
    }

    pub fn metrics(&self) -> Metrics {
        let counters = self.logs.lock().unwrap_or_else(|e| e.into_inner()).ledger.counters();
        Metrics::new(counters, &self.snapshot())
    }

    pub fn export_manifest(&self) -> Result<DatasetManifest, ServiceError> {
        let logs = self.logs.lock().unwrap_or_else(|e| e.into_inner());
        feedback_manifest(&logs.ledger, &self.config.store_dir)
    }
}

/// Counters rebuilt from the logs in `store_dir` alone.
pub fn replay_counters(store_dir: &Path) -> Result<Counters, ServiceError> {
    Ok(replay(store_dir)?.counters())
}

/// The retraining manifest rebuilt from the logs in `store_dir` alone.
pub fn export_from_store(store_dir: &Path) -> Result<DatasetManifest, ServiceError> {
    feedback_manifest(&replay(store_dir)?, store_dir)
}

fn replay(store_dir: &Path) -> Result<Ledger, ServiceError> {
    let requests = JsonlLog::<AuthRequestRecord>::read_all(&store_dir.join(REQUESTS_LOG))?;
    let feedback = JsonlLog::<FeedbackRecord>::read_all(&store_dir.join(FEEDBACK_LOG))?;
    Ok(Ledger::replay(&requests, &feedback))
}

fn feedback_manifest(ledger: &Ledger, store_dir: &Path) -> Result<DatasetManifest, ServiceError> {
    if !ledger.has_feedback() {
        return Err(ServiceError::NoFeedback);
    }
    let root = std::path::absolute(store_dir)?;
    let entries = ledger
        .labeled_images()
        .into_iter()
        .map(|(rel, label)| ManifestEntry {
            path: root.join(rel).to_string_lossy().into_owned(),
            label,
            split: Split::Train,
            source: FEEDBACK_SOURCE.to_string(),
        })
        .collect();
    Ok(DatasetManifest::new(entries, 0).with_root(root))
}
