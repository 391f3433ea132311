use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DecisionError;

/// Ground truth of an article.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Counterfeit,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Counterfeit => "counterfeit",
        }
    }

    /// Binary target with 1 = genuine.
    pub fn target(self) -> f64 {
        match self {
            Label::Genuine => 1.0,
            Label::Counterfeit => 0.0,
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "genuine" => Ok(Label::Genuine),
            "counterfeit" => Ok(Label::Counterfeit),
            other => Err(format!("label must be genuine or counterfeit, got {other:?}")),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub score: f64,
    pub truth: Label,
}

/// Labelled scores, the input to calibration and evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub items: Vec<ScoredItem>,
}

impl ScoredSet {
    pub fn new(items: Vec<ScoredItem>) -> Result<Self, DecisionError> {
        for it in &items {
            if !(0.0..=1.0).contains(&it.score) {
                return Err(DecisionError::ScoreOutOfRange(it.score));
            }
        }
        Ok(Self { items })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, Label)>) -> Result<Self, DecisionError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(score, truth)| ScoredItem { score, truth })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub(crate) fn require_nonempty(&self) -> Result<(), DecisionError> {
        if self.items.is_empty() {
            Err(DecisionError::EmptySet)
        } else {
            Ok(())
        }
    }

    /// One `score,label` line per item.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for it in &self.items {
            writeln!(out, "{},{}", it.score, it.truth).unwrap();
        }
        out
    }

    /// Parses the `score,label` format. Blank lines and a `score,label`
    /// header are ignored.
    pub fn parse(text: &str) -> Result<Self, DecisionError> {
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line == "score,label") {
                continue;
            }
            let err = |message: String| DecisionError::Parse {
                line: i + 1,
                message,
            };
            let (s, l) = line
                .split_once(',')
                .ok_or_else(|| err("expected score,label".into()))?;
            let score: f64 = s
                .trim()
                .parse()
                .map_err(|_| err(format!("bad score {s:?}")))?;
            let truth: Label = l.trim().parse().map_err(err)?;
            items.push(ScoredItem { score, truth });
        }
        Self::new(items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_accepts_header_and_rejects_bad_labels() {
        let s = ScoredSet::parse("score,label\n0.25,genuine\n\n0.5,counterfeit\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.items[1].truth, Label::Counterfeit);
        assert!(matches!(
            ScoredSet::parse("0.2,fake"),
            Err(DecisionError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            ScoredSet::parse("1.2,genuine"),
            Err(DecisionError::ScoreOutOfRange(_))
        ));
    }

    proptest! {
        #[test]
        fn text_round_trip(items in proptest::collection::vec((0.0..=1.0f64, any::<bool>()), 0..50)) {
            let set = ScoredSet::from_pairs(items.into_iter().map(|(s, g)| {
                (s, if g { Label::Genuine } else { Label::Counterfeit })
            })).unwrap();
            prop_assert_eq!(ScoredSet::parse(&set.to_text()).unwrap(), set);
        }
    }
}
