//! Score-to-verdict decisions with a reject option.
//!
//! A [`ThresholdBand`] `(lower, upper]` splits the score axis into three
//! regions: scores at or below `lower` are COUNTERFEIT, scores above `upper`
//! are GENUINE, and anything in between is rejected as ambiguous. A band with
//! `lower == upper` never rejects and is plain thresholding.
//!
//! Bands are calibrated against a [`CostMatrix`] on a labelled [`ScoredSet`]
//! by exhaustive search over the empirical candidate grid (see
//! [`calibrate`]), and the same grid drives the accuracy/rejection
//! [`TradeoffCurve`].

mod calibrate;
mod report;
mod scored;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use crate::error::DecisionError;
pub use calibrate::{
    calibrate_band, candidate_thresholds, expected_cost, format_tradeoff, tradeoff_curve, CalibratedBand,
    CalibrationWarning, TradeoffCurve, TradeoffPoint,
};
pub use report::{auc, evaluate, format_percent, format_weight_count, Confusion, EvalReport, ModelMeta};
pub use scored::{Label, ScoredItem, ScoredSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VerdictLabel {
    Genuine,
    Counterfeit,
    Reject,
}

impl VerdictLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Genuine => "GENUINE",
            VerdictLabel::Counterfeit => "COUNTERFEIT",
            VerdictLabel::Reject => "REJECT",
        }
    }

    /// The ground-truth label a non-reject verdict asserts.
    pub fn asserted(self) -> Option<Label> {
        match self {
            VerdictLabel::Genuine => Some(Label::Genuine),
            VerdictLabel::Counterfeit => Some(Label::Counterfeit),
            VerdictLabel::Reject => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    #[serde(rename = "ambiguous score")]
    AmbiguousScore,
    #[serde(rename = "no mark")]
    NoMark,
    #[serde(rename = "degenerate crop")]
    DegenerateCrop,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::AmbiguousScore => "ambiguous score",
            RejectReason::NoMark => "no mark",
            RejectReason::DegenerateCrop => "degenerate crop",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A three-way decision. REJECT always carries a reason; the other labels
/// never do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
}

impl Verdict {
    pub const GENUINE: Verdict = Verdict {
        label: VerdictLabel::Genuine,
        reason: None,
    };
    pub const COUNTERFEIT: Verdict = Verdict {
        label: VerdictLabel::Counterfeit,
        reason: None,
    };

    pub fn reject(reason: RejectReason) -> Self {
        Verdict {
            label: VerdictLabel::Reject,
            reason: Some(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBand {
    pub lower: f64,
    pub upper: f64,
    pub version: String,
}

impl ThresholdBand {
    pub fn new(lower: f64, upper: f64, version: impl Into<String>) -> Result<Self, DecisionError> {
        let band = Self {
            lower,
            upper,
            version: version.into(),
        };
        band.validate()?;
        Ok(band)
    }

    /// A band whose version is derived from its bounds, so equal bounds
    /// always carry equal versions.
    pub fn derived(lower: f64, upper: f64) -> Result<Self, DecisionError> {
        let mut h = Sha256::new();
        h.update(lower.to_bits().to_le_bytes());
        h.update(upper.to_bits().to_le_bytes());
        let digest = hex::encode(h.finalize());
        Self::new(lower, upper, format!("band-{}", &digest[..12]))
    }

    /// The single-threshold rule at `t`.
    pub fn single(t: f64) -> Result<Self, DecisionError> {
        Self::derived(t, t)
    }

    pub fn validate(&self) -> Result<(), DecisionError> {
        let ok = self.lower.is_finite()
            && self.upper.is_finite()
            && 0.0 <= self.lower
            && self.lower <= self.upper
            && self.upper <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(DecisionError::InvalidBand {
                lower: self.lower,
                upper: self.upper,
            })
        }
    }

    pub fn rejects_nothing(&self) -> bool {
        self.lower == self.upper
    }
}

/// Per-outcome costs. A counterfeit passed as genuine costs
/// `cost_false_genuine`; a genuine item flagged as counterfeit costs
/// `cost_false_counterfeit`; every rejection costs `cost_reject`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub cost_false_genuine: f64,
    pub cost_false_counterfeit: f64,
    pub cost_reject: f64,
}

impl CostMatrix {
    pub fn new(
        cost_false_genuine: f64,
        cost_false_counterfeit: f64,
        cost_reject: f64,
    ) -> Result<Self, DecisionError> {
        let c = Self {
            cost_false_genuine,
            cost_false_counterfeit,
            cost_reject,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), DecisionError> {
        let all = [
            self.cost_false_genuine,
            self.cost_false_counterfeit,
            self.cost_reject,
        ];
        if all.iter().any(|c| !c.is_finite()) {
            return Err(DecisionError::InvalidCosts("costs must be finite".into()));
        }
        if self.cost_false_genuine < 0.0 || self.cost_false_counterfeit < 0.0 {
            return Err(DecisionError::InvalidCosts(
                "error costs must be non-negative".into(),
            ));
        }
        if self.cost_reject <= 0.0 {
            return Err(DecisionError::InvalidCosts(
                "cost_reject must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Parses `"fg,fc,reject"`.
    pub fn parse_triple(s: &str) -> Result<Self, DecisionError> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(DecisionError::InvalidCosts(format!(
                "expected three comma-separated costs, got {s:?}"
            )));
        }
        let mut v = [0.0; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| DecisionError::InvalidCosts(format!("not a number: {p:?}")))?;
        }
        Self::new(v[0], v[1], v[2])
    }

    /// Cost of one decision against the truth.
    pub fn outcome_cost(&self, verdict: VerdictLabel, truth: Label) -> f64 {
        match (verdict, truth) {
            (VerdictLabel::Reject, _) => self.cost_reject,
            (VerdictLabel::Genuine, Label::Counterfeit) => self.cost_false_genuine,
            (VerdictLabel::Counterfeit, Label::Genuine) => self.cost_false_counterfeit,
            _ => 0.0,
        }
    }
}

/// GENUINE iff `score > upper`, COUNTERFEIT iff `score <= lower`, otherwise
/// REJECT with reason "ambiguous score".
pub fn decide(score: f64, band: &ThresholdBand) -> Verdict {
    if score > band.upper {
        Verdict::GENUINE
    } else if score <= band.lower {
        Verdict::COUNTERFEIT
    } else {
        Verdict::reject(RejectReason::AmbiguousScore)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn band(l: f64, u: f64) -> ThresholdBand {
        ThresholdBand::derived(l, u).unwrap()
    }

    #[test]
    fn decide_examples() {
        assert_eq!(decide(0.60, &band(0.5, 0.5)), Verdict::GENUINE);
        assert_eq!(
            decide(0.50, &band(0.35, 0.65)),
            Verdict::reject(RejectReason::AmbiguousScore)
        );
        assert_eq!(decide(0.20, &band(0.35, 0.65)), Verdict::COUNTERFEIT);
    }

    #[test]
    fn boundaries_go_to_the_lower_side() {
        assert_eq!(decide(0.5, &band(0.5, 0.5)), Verdict::COUNTERFEIT);
        assert_eq!(decide(0.35, &band(0.35, 0.65)), Verdict::COUNTERFEIT);
        assert_eq!(
            decide(0.65, &band(0.35, 0.65)),
            Verdict::reject(RejectReason::AmbiguousScore)
        );
        assert_eq!(decide(1.0, &band(1.0, 1.0)), Verdict::COUNTERFEIT);
        assert_eq!(decide(0.0, &band(0.0, 0.0)), Verdict::COUNTERFEIT);
    }

    #[test]
    fn invalid_bands_rejected() {
        assert!(ThresholdBand::new(0.6, 0.4, "x").is_err());
        assert!(ThresholdBand::new(-0.1, 0.4, "x").is_err());
        assert!(ThresholdBand::new(0.1, 1.4, "x").is_err());
        assert!(ThresholdBand::new(f64::NAN, 0.4, "x").is_err());
    }

    #[test]
    fn derived_versions_depend_only_on_bounds() {
        assert_eq!(band(0.3, 0.7).version, band(0.3, 0.7).version);
        assert_ne!(band(0.3, 0.7).version, band(0.3, 0.71).version);
    }

    #[test]
    fn cost_matrix_requires_positive_reject_cost() {
        assert!(CostMatrix::new(1.0, 1.0, 0.0).is_err());
        assert!(CostMatrix::new(1.0, 1.0, -0.5).is_err());
        assert!(CostMatrix::new(-1.0, 1.0, 0.5).is_err());
        assert!(CostMatrix::new(0.0, 0.0, 0.5).is_ok());
        assert_eq!(
            CostMatrix::parse_triple("1, 1,0.5").unwrap(),
            CostMatrix::new(1.0, 1.0, 0.5).unwrap()
        );
        assert!(CostMatrix::parse_triple("1,1").is_err());
    }

    #[test]
    fn verdict_serialization_uses_reason_codes() {
        let v = Verdict::reject(RejectReason::NoMark);
        assert_eq!(
            serde_json::to_string(&v).unwrap(),
            r#"{"label":"REJECT","reason":"no mark"}"#
        );
        assert_eq!(
            serde_json::to_string(&Verdict::GENUINE).unwrap(),
            r#"{"label":"GENUINE"}"#
        );
    }

    proptest! {
        #[test]
        fn decide_is_exhaustive(s in 0.0..=1.0f64, a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let (l, u) = if a <= b { (a, b) } else { (b, a) };
            let v = decide(s, &band(l, u));
            let hits = [s > u, s <= l, l < s && s <= u].iter().filter(|x| **x).count();
            prop_assert_eq!(hits, 1);
            prop_assert_eq!(v.label == VerdictLabel::Reject, v.reason.is_some());
        }

        #[test]
        fn degenerate_band_never_rejects(s in 0.0..=1.0f64, t in 0.0..=1.0f64) {
            let v = decide(s, &band(t, t));
            prop_assert_ne!(v.label, VerdictLabel::Reject);
            prop_assert_eq!(v.label == VerdictLabel::Genuine, s > t);
        }
    }
}
