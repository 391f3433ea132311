//! Versioned classifier artifacts available for activation.
//!
//! Each subdirectory of the artifact directory holding a `meta.json` is one
//! model. An optional `val_scores.json` beside it is the validation
//! [`ScoredSet`] used for recalibration and the tradeoff curve.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use markguard_core::decision::ScoredSet;
use markguard_core::pipeline::ModelHandle;
use markguard_core::training::{ArtifactMeta, ModelArtifact, META_FILE};
use serde::Serialize;

use crate::error::ServiceError;

pub const VALIDATION_FILE: &str = "val_scores.json";

pub struct RegisteredModel {
    pub meta: ArtifactMeta,
    pub handle: ModelHandle,
    pub validation: Option<Arc<ScoredSet>>,
}

impl RegisteredModel {
    pub fn from_artifact(artifact: &ModelArtifact, validation: Option<ScoredSet>) -> Result<Self, ServiceError> {
        let handle = artifact
            .handle()
            .map_err(|e| ServiceError::Store(format!("model {}: {e}", artifact.meta.version)))?;
        Ok(Self {
            meta: artifact.meta.clone(),
            handle,
            validation: validation.map(Arc::new),
        })
    }

    pub fn load(dir: &Path) -> Result<Self, ServiceError> {
        let artifact = ModelArtifact::load(dir).map_err(|e| ServiceError::Store(e.to_string()))?;
        let vp = dir.join(VALIDATION_FILE);
        let validation = if vp.exists() {
            let text = std::fs::read_to_string(&vp)?;
            Some(serde_json::from_str(&text).map_err(|e| ServiceError::Store(format!("{}: {e}", vp.display())))?)
        } else {
            None
        };
        Self::from_artifact(&artifact, validation)
    }
}

/// Listing entry for `GET /v1/models`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelListing {
    pub version: String,
    pub architecture: String,
    pub layer_count: u64,
    pub weight_count: u64,
    pub has_validation_set: bool,
    pub active: bool,
}

#[derive(Default)]
pub struct ModelRegistry {
    models: BTreeMap<String, Arc<RegisteredModel>>,
}

impl ModelRegistry {
    /// Loads every artifact directory under `dir`. Directories that fail to
    /// load are skipped with a warning.
    pub fn scan(dir: &Path) -> Result<Self, ServiceError> {
        let mut reg = Self::default();
        if !dir.exists() {
            return Ok(reg);
        }
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if !path.join(META_FILE).is_file() {
                continue;
            }
            match RegisteredModel::load(&path) {
                Ok(m) => reg.insert(m),
                Err(e) => tracing::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(reg)
    }

    pub fn insert(&mut self, model: RegisteredModel) {
        self.insert_shared(Arc::new(model));
    }

    pub fn insert_shared(&mut self, model: Arc<RegisteredModel>) {
        self.models.insert(model.meta.version.clone(), model);
    }

    pub fn get(&self, version: &str) -> Option<Arc<RegisteredModel>> {
        self.models.get(version).cloned()
    }

    pub fn versions(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn listing(&self, active: Option<&str>) -> Vec<ModelListing> {
        self.models
            .values()
            .map(|m| ModelListing {
                version: m.meta.version.clone(),
                architecture: m.meta.architecture.clone(),
                layer_count: m.meta.layer_count,
                weight_count: m.meta.weight_count,
                has_validation_set: m.validation.is_some(),
                active: active == Some(m.meta.version.as_str()),
            })
            .collect()
    }
}
