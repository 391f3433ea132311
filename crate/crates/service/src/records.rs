use chrono::{DateTime, Utc};
use markguard_core::decision::{CostMatrix, Label, ThresholdBand};
use markguard_core::pipeline::AuthResult;
use markguard_core::raster::CaptureMeta;
use serde::{Deserialize, Serialize};

/// One authenticate call as written to the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthRequestRecord {
    pub request_id: String,
    pub received_at: DateTime<Utc>,
    pub capture_meta: Option<CaptureMeta>,
    pub result: AuthResult,
    pub model_version: String,
    pub thresholds_version: String,
    /// The snapshot the request ran under.
    pub config_version: u64,
    /// SHA-256 of the submitted bytes.
    pub image_sha256: String,
    /// Stored image, relative to the store directory.
    pub image_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub request_id: String,
    pub expert_label: Label,
    pub submitted_at: DateTime<Utc>,
    pub submitter: String,
}

/// An installed (model, band) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub config_version: u64,
    pub model_version: String,
    pub band: ThresholdBand,
    pub costs: CostMatrix,
    pub installed_at: DateTime<Utc>,
    /// "activate" or "recalibrate".
    pub cause: String,
}
