//! Authentication service: model registry, atomic configuration snapshots,
//! expert feedback, threshold management and an append-only audit log,
//! exposed over HTTP.
//!
//! The store directory holds three JSON-lines logs (`requests.jsonl`,
//! `feedback.jsonl`, `config.jsonl`) and the submitted images under
//! `images/`, named by their SHA-256. Metrics and the retraining export are
//! rebuilt from the logs on startup.

pub mod api;
pub mod error;
pub mod ledger;
pub mod records;
pub mod registry;
pub mod service;
pub mod store;

pub use api::{router, serve};
pub use error::ServiceError;
pub use ledger::Counters;
pub use records::{AuthRequestRecord, ConfigRecord, FeedbackRecord};
pub use registry::{ModelListing, ModelRegistry, RegisteredModel};
pub use service::{Metrics, Service, ServiceConfig, Snapshot, SnapshotInfo};
