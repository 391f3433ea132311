use serde::{Deserialize, Serialize};

use super::classifier::{train_on, TrainConfig, TrainLog};
use super::data::{score_examples, PreparedData};
use crate::decision::{calibrate_band, evaluate, CalibratedBand, CostMatrix, EvalReport, ModelMeta};
use crate::error::TrainError;
use crate::manifest::Split;
use crate::nn::lookup;

/// One architecture's outcome in an experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub architecture: String,
    pub report: Option<EvalReport>,
    pub calibration: Option<CalibratedBand>,
    pub log: Option<TrainLog>,
    pub model_version: Option<String>,
    pub error: Option<String>,
}

pub const TABLE_HEADER: &str = "architecture & layers & weights & rejection & accuracy";

/// Trains, calibrates on val and evaluates on test for one architecture.
pub fn run_architecture(
    data: &PreparedData,
    architecture: &str,
    cfg: &TrainConfig,
    costs: &CostMatrix,
) -> Result<MatrixRow, TrainError> {
    let cfg = TrainConfig {
        architecture: architecture.into(),
        ..cfg.clone()
    };
    let (artifact, log) = train_on(data, &cfg)?;
    let model = artifact.handle()?;
    let val = score_examples(&model, &data.val)?;
    let calibration = calibrate_band(&val, costs)?;
    let test = score_examples(&model, &data.test)?;
    let info = lookup(architecture).ok_or_else(|| TrainError::UnknownArchitecture(architecture.into()))?;
    let meta = ModelMeta {
        architecture: architecture.into(),
        layer_count: artifact.meta.layer_count,
        layer_unit: info.layer_unit.map(String::from),
        weight_count: artifact.meta.weight_count,
    };
    let mut report = evaluate(&test, &calibration.band, &meta)?;
    report.add_capture_rejects(data.capture_rejects(Split::Test));
    Ok(MatrixRow {
        architecture: architecture.into(),
        report: Some(report),
        calibration: Some(calibration),
        log: Some(log),
        model_version: Some(artifact.meta.version),
        error: None,
    })
}

/// One row per architecture, in order. A failing architecture yields a row
/// carrying its error and the remaining ones still run.
pub fn run_matrix(
    data: &PreparedData,
    architectures: &[String],
    cfg: &TrainConfig,
    costs: &CostMatrix,
) -> Result<Vec<MatrixRow>, TrainError> {
    if architectures.is_empty() {
        return Err(TrainError::InvalidConfig("no architectures given".into()));
    }
    costs.validate()?;
    if data.test.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    Ok(architectures
        .iter()
        .map(|a| {
            run_architecture(data, a, cfg, costs).unwrap_or_else(|e| MatrixRow {
                architecture: a.clone(),
                report: None,
                calibration: None,
                log: None,
                model_version: None,
                error: Some(e.to_string()),
            })
        })
        .collect())
}

/// Header plus one `&`-separated line per row.
pub fn format_matrix(rows: &[MatrixRow]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        match (&r.report, &r.error) {
            (Some(rep), _) => out.push_str(&rep.table_row()),
            (None, Some(e)) => out.push_str(&format!("{} & failed: {e}", r.architecture)),
            (None, None) => out.push_str(&format!("{} & n/a", r.architecture)),
        }
        out.push('\n');
    }
    out
}
