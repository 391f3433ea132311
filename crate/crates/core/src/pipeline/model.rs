use std::sync::Arc;

use crate::error::PipelineError;
use crate::nn::{sigmoid, stem, Network};
use crate::raster::AlignedMark;

/// Anything that maps a canonical crop to a logit (`> 0` leans genuine).
pub trait Scorer: Send + Sync {
    fn logit(&self, mark: &AlignedMark) -> f64;
}

impl Scorer for Network {
    fn logit(&self, mark: &AlignedMark) -> f64 {
        Network::logit(self, &stem(mark))
    }
}

/// A versioned, possibly not-yet-loaded classifier.
#[derive(Clone)]
pub struct ModelHandle {
    version: String,
    scorer: Option<Arc<dyn Scorer>>,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("version", &self.version)
            .field("loaded", &self.scorer.is_some())
            .finish()
    }
}

impl ModelHandle {
    pub fn new(version: impl Into<String>, scorer: Arc<dyn Scorer>) -> Self {
        Self {
            version: version.into(),
            scorer: Some(scorer),
        }
    }

    pub fn unavailable(version: impl Into<String>) -> Self {
        Self {
            version: version.into(),
            scorer: None,
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn is_loaded(&self) -> bool {
        self.scorer.is_some()
    }

    pub fn require_loaded(&self) -> Result<&dyn Scorer, PipelineError> {
        self.scorer
            .as_deref()
            .ok_or_else(|| PipelineError::ModelUnavailable(self.version.clone()))
    }

    /// Genuineness probability in `[0, 1]`.
    pub fn score(&self, mark: &AlignedMark) -> Result<f64, PipelineError> {
        let z = self.require_loaded()?.logit(mark);
        if z.is_nan() {
            return Err(PipelineError::ModelUnavailable(format!(
                "{} produced a non-finite logit",
                self.version
            )));
        }
        Ok(sigmoid(z))
    }
}
