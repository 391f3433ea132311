use serde::{Deserialize, Serialize};

use super::{decide, DecisionError, Label, ScoredSet, ThresholdBand, VerdictLabel};

/// Verdict counts against ground truth, with GENUINE as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub rejected: u64,
}

impl Confusion {
    pub fn record(&mut self, verdict: VerdictLabel, truth: Label) {
        match (verdict, truth) {
            (VerdictLabel::Reject, _) => self.rejected += 1,
            (VerdictLabel::Genuine, Label::Genuine) => self.tp += 1,
            (VerdictLabel::Counterfeit, Label::Counterfeit) => self.tn += 1,
            (VerdictLabel::Genuine, Label::Counterfeit) => self.fp += 1,
            (VerdictLabel::Counterfeit, Label::Genuine) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_ + self.rejected
    }

    pub fn accepted(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Accuracy over accepted items; `None` when everything was rejected.
    pub fn accuracy(&self) -> Option<f64> {
        let acc = self.accepted();
        (acc > 0).then(|| (self.tp + self.tn) as f64 / acc as f64)
    }

    pub fn rejection_rate(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.rejected as f64 / t as f64,
        }
    }
}

/// Architecture description copied into evaluation rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub architecture: String,
    pub layer_count: u64,
    /// What `layer_count` counts when it is not plain layers, e.g.
    /// "transformer blocks".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_unit: Option<String>,
    pub weight_count: u64,
}

/// One row of an architecture comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub architecture: String,
    pub layer_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_unit: Option<String>,
    pub weight_count: u64,
    pub rejection_rate: f64,
    /// `null` when every item was rejected.
    pub accuracy: Option<f64>,
    pub confusion: Confusion,
}

impl EvalReport {
    /// Counts `n` further items as rejected before scoring (captures where
    /// no usable mark was found).
    pub fn add_capture_rejects(&mut self, n: u64) {
        self.confusion.rejected += n;
        self.rejection_rate = self.confusion.rejection_rate();
        self.accuracy = self.confusion.accuracy();
    }

    /// `architecture & layers & weights & rejection & accuracy`.
    pub fn table_row(&self) -> String {
        let layers = match &self.layer_unit {
            Some(unit) => format!("{} {unit}", self.layer_count),
            None => self.layer_count.to_string(),
        };
        format!(
            "{} & {} & {} & {} & {}",
            self.architecture,
            layers,
            format_weight_count(self.weight_count),
            format_percent(self.rejection_rate),
            self.accuracy
                .map(format_percent)
                .unwrap_or_else(|| "n/a".into())
        )
    }
}

/// `0.0354 -> "3.54%"`; exact zero prints as `"0%"`.
pub fn format_percent(fraction: f64) -> String {
    if fraction == 0.0 {
        "0%".into()
    } else {
        format!("{:.2}%", fraction * 100.0)
    }
}

/// Compact parameter counts: `89_000_000 -> "89M"`, `6_065 -> "6.1K"`.
pub fn format_weight_count(n: u64) -> String {
    if n >= 1_000_000 {
        let m = n as f64 / 1e6;
        if n % 1_000_000 == 0 {
            format!("{}M", n / 1_000_000)
        } else {
            format!("{m:.1}M")
        }
    } else if n >= 1_000 {
        format!("{:.1}K", n as f64 / 1e3)
    } else {
        n.to_string()
    }
}

/// Applies `band` to every item and tallies the outcome.
pub fn evaluate(
    set: &ScoredSet,
    band: &ThresholdBand,
    meta: &ModelMeta,
) -> Result<EvalReport, DecisionError> {
    set.require_nonempty()?;
    band.validate()?;
    let mut confusion = Confusion::default();
    for it in &set.items {
        confusion.record(decide(it.score, band).label, it.truth);
    }
    Ok(EvalReport {
        architecture: meta.architecture.clone(),
        layer_count: meta.layer_count,
        layer_unit: meta.layer_unit.clone(),
        weight_count: meta.weight_count,
        rejection_rate: confusion.rejection_rate(),
        accuracy: confusion.accuracy(),
        confusion,
    })
}

/// Area under the ROC curve with genuine as the positive class, counting
/// tied genuine/counterfeit pairs as one half. `None` unless both classes
/// are present.
pub fn auc(set: &ScoredSet) -> Option<f64> {
    let mut items: Vec<_> = set.items.iter().map(|i| (i.score, i.truth)).collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut below, mut wins) = (0u64, 0.0f64);
    let mut i = 0;
    while i < items.len() {
        let j = i + items[i..].iter().take_while(|x| x.0 == items[i].0).count();
        let tie = &items[i..j];
        let g = tie.iter().filter(|x| x.1 == Label::Genuine).count() as u64;
        let c = tie.len() as u64 - g;
        wins += g as f64 * below as f64 + 0.5 * (g * c) as f64;
        below += c;
        i = j;
    }
    let n_c = below;
    let n_g = items.len() as u64 - n_c;
    (n_g > 0 && n_c > 0).then(|| wins / (n_g as f64 * n_c as f64))
}
