use thiserror::Error;

use crate::decision::RejectReason;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("image {width}x{height} is smaller than 64x64")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("no mark found (best confidence {confidence:.3})")]
    NoMarkFound { confidence: f64 },
    #[error("degenerate crop: {0}")]
    DegenerateCrop(String),
    #[error("model {0:?} is not loaded")]
    ModelUnavailable(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// The REJECT reason this failure maps to, if it is a capture problem
    /// rather than an operational one.
    pub fn reject_reason(&self) -> Option<RejectReason> {
        match self {
            PipelineError::NoMarkFound { .. } => Some(RejectReason::NoMark),
            PipelineError::DegenerateCrop(_) => Some(RejectReason::DegenerateCrop),
            _ => None,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::ImageTooSmall { .. } => "image_too_small",
            PipelineError::MalformedImage(_) => "malformed_image",
            PipelineError::NoMarkFound { .. } => "no_mark_found",
            PipelineError::DegenerateCrop(_) => "degenerate_crop",
            PipelineError::ModelUnavailable(_) => "model_unavailable",
            PipelineError::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DecisionError {
    #[error("scored set is empty")]
    EmptySet,
    #[error("invalid band [{lower}, {upper}]")]
    InvalidBand { lower: f64, upper: f64 },
    #[error("invalid cost matrix: {0}")]
    InvalidCosts(String),
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("rejection budgets must be sorted and within [0, 1)")]
    InvalidBudgets,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl DecisionError {
    pub fn code(&self) -> &'static str {
        match self {
            DecisionError::EmptySet => "empty_set",
            DecisionError::InvalidBand { .. } => "invalid_band",
            DecisionError::InvalidCosts(_) => "invalid_costs",
            DecisionError::ScoreOutOfRange(_) => "score_out_of_range",
            DecisionError::InvalidBudgets => "invalid_budgets",
            DecisionError::Parse { .. } => "parse",
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("mark does not fit inside the {width}x{height} canvas")]
    OutOfFrame { width: u32, height: u32 },
    #[error("invalid mark parameters: {0}")]
    InvalidParams(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        match self {
            SynthError::OutOfFrame { .. } => "out_of_frame",
            SynthError::InvalidParams(_) => "invalid_params",
            SynthError::InvalidConfig(_) => "invalid_config",
            SynthError::Io { .. } => "io",
            SynthError::Format(e) => e.code(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("split {0} is empty")]
    EmptySplit(&'static str),
    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),
    #[error("architecture {0:?} needs pretrained weights that are not available")]
    PretrainedUnavailable(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl TrainError {
    pub fn code(&self) -> &'static str {
        match self {
            TrainError::EmptySplit(_) => "empty_split",
            TrainError::UnknownArchitecture(_) => "unknown_architecture",
            TrainError::PretrainedUnavailable(_) => "pretrained_unavailable",
            TrainError::NonFiniteLoss { .. } => "non_finite_loss",
            TrainError::InvalidConfig(_) => "invalid_config",
            TrainError::Pipeline(e) => e.code(),
            TrainError::Decision(e) => e.code(),
            TrainError::Synth(e) => e.code(),
            TrainError::Format(e) => e.code(),
        }
    }
}

/// Reading or writing one of the on-disk formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl FormatError {
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::Io { .. } => "io",
            FormatError::Invalid { .. } => "invalid_format",
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn invalid(path: impl AsRef<std::path::Path>, message: impl ToString) -> Self {
        FormatError::Invalid {
            path: path.as_ref().display().to_string(),
            message: message.to_string(),
        }
    }
}
