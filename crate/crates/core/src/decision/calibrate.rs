//! Band calibration and the rejection/accuracy tradeoff.
//!
//! Both searches run over the same candidate grid: `0`, `1`, and the
//! midpoints between consecutive distinct scores. Every band `(t_i, t_j)`
//! with `i <= j` is evaluated in O(1) from prefix counts over the sorted
//! scores, so a full search is O(m^2) in the number of candidates.
//!
//! Tie-breaks are expressed in grid positions rather than score values:
//! "narrowest" means fewest grid steps between the bounds. This keeps the
//! chosen partition of items unchanged under any strictly increasing
//! rescaling of the scores that fixes 0 and 1.

use serde::{Deserialize, Serialize};

use super::{decide, CostMatrix, DecisionError, Label, ScoredSet, ThresholdBand};

/// Sorted, de-duplicated candidate thresholds for `set`.
pub fn candidate_thresholds(set: &ScoredSet) -> Vec<f64> {
    let mut scores: Vec<f64> = set.items.iter().map(|i| i.score).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut out = Vec::with_capacity(scores.len() + 1);
    out.push(0.0);
    out.extend(scores.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.push(1.0);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Prefix counts of items at or below each candidate threshold.
struct Grid {
    thresholds: Vec<f64>,
    n_le: Vec<u64>,
    genuine_le: Vec<u64>,
    counterfeit_le: Vec<u64>,
    n: u64,
    genuine: u64,
    counterfeit: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PairCounts {
    /// Genuine items at or below `lower`.
    false_counterfeit: u64,
    /// Counterfeit items above `upper`.
    false_genuine: u64,
    rejected: u64,
    correct: u64,
}

impl Grid {
    fn new(set: &ScoredSet) -> Self {
        let thresholds = candidate_thresholds(set);
        let mut sorted: Vec<(f64, Label)> = set.items.iter().map(|i| (i.score, i.truth)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut n_le = Vec::with_capacity(thresholds.len());
        let mut genuine_le = Vec::with_capacity(thresholds.len());
        let mut counterfeit_le = Vec::with_capacity(thresholds.len());
        let (mut k, mut g, mut c) = (0usize, 0u64, 0u64);
        for &t in &thresholds {
            while k < sorted.len() && sorted[k].0 <= t {
                match sorted[k].1 {
                    Label::Genuine => g += 1,
                    Label::Counterfeit => c += 1,
                }
                k += 1;
            }
            n_le.push(k as u64);
            genuine_le.push(g);
            counterfeit_le.push(c);
        }
        let genuine = set.items.iter().filter(|i| i.truth == Label::Genuine).count() as u64;
        Self {
            thresholds,
            n_le,
            genuine_le,
            counterfeit_le,
            n: set.items.len() as u64,
            genuine,
            counterfeit: set.items.len() as u64 - genuine,
        }
    }

    fn len(&self) -> usize {
        self.thresholds.len()
    }

    #[inline]
    fn counts(&self, i: usize, j: usize) -> PairCounts {
        PairCounts {
            false_counterfeit: self.genuine_le[i],
            false_genuine: self.counterfeit - self.counterfeit_le[j],
            rejected: self.n_le[j] - self.n_le[i],
            correct: self.counterfeit_le[i] + (self.genuine - self.genuine_le[j]),
        }
    }

    #[inline]
    fn total_cost(&self, c: &PairCounts, costs: &CostMatrix) -> f64 {
        costs.cost_false_counterfeit * c.false_counterfeit as f64
            + costs.cost_false_genuine * c.false_genuine as f64
            + costs.cost_reject * c.rejected as f64
    }
}

/// Mean per-item cost of applying `band` to `set`.
pub fn expected_cost(
    set: &ScoredSet,
    band: &ThresholdBand,
    costs: &CostMatrix,
) -> Result<f64, DecisionError> {
    set.require_nonempty()?;
    band.validate()?;
    costs.validate()?;
    let total: f64 = set
        .items
        .iter()
        .map(|it| costs.outcome_cost(decide(it.score, band).label, it.truth))
        .sum();
    Ok(total / set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationWarning {
    /// The cheapest band rejects every item: the cost matrix makes
    /// classification pointless on this set.
    RejectAllDominant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedBand {
    pub band: ThresholdBand,
    pub expected_cost: f64,
    pub rejection_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<CalibrationWarning>,
}

/// Minimum-expected-cost band over the candidate grid.
///
/// Ties go to the lowest rejection count, then the narrowest band, then the
/// smallest lower bound.
pub fn calibrate_band(set: &ScoredSet, costs: &CostMatrix) -> Result<CalibratedBand, DecisionError> {
    set.require_nonempty()?;
    costs.validate()?;
    let grid = Grid::new(set);
    let m = grid.len();
    let mut best: Option<(f64, u64, usize, usize)> = None;
    for i in 0..m {
        for j in i..m {
            let c = grid.counts(i, j);
            let cost = grid.total_cost(&c, costs);
            let better = match best {
                None => true,
                Some((bc, br, bi, bj)) => {
                    let tol = 1e-12 * bc.abs().max(1.0);
                    if cost < bc - tol {
                        true
                    } else if cost > bc + tol {
                        false
                    } else {
                        (c.rejected, j - i, i) < (br, bj - bi, bi)
                    }
                }
            };
            if better {
                best = Some((cost, c.rejected, i, j));
            }
        }
    }
    let (cost, rejected, i, j) = best.expect("grid has at least two candidates");
    let band = ThresholdBand::derived(grid.thresholds[i], grid.thresholds[j])?;
    Ok(CalibratedBand {
        band,
        expected_cost: cost / grid.n as f64,
        rejection_rate: rejected as f64 / grid.n as f64,
        warning: (rejected == grid.n).then_some(CalibrationWarning::RejectAllDominant),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub rejection_budget: f64,
    pub best_accuracy: f64,
    /// Rejection rate the chosen band actually reaches on the set.
    pub achieved_rejection: f64,
    pub band: ThresholdBand,
}

impl TradeoffPoint {
    /// `"99.71% @ 3.06% rejection"`.
    pub fn label(&self) -> String {
        format_tradeoff(self.achieved_rejection, self.best_accuracy)
    }
}

/// Renders an (achieved rejection, accuracy) pair for display.
pub fn format_tradeoff(rejection: f64, accuracy: f64) -> String {
    format!("{:.2}% @ {:.2}% rejection", accuracy * 100.0, rejection * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub points: Vec<TradeoffPoint>,
}

impl TradeoffCurve {
    /// Two tab-separated columns, achieved rejection and accuracy, with a
    /// header row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("rejection\taccuracy\n");
        for p in &self.points {
            out.push_str(&format!("{}\t{}\n", p.achieved_rejection, p.best_accuracy));
        }
        out
    }
}

/// For each budget `r`, the band with the highest accuracy over accepted
/// items among bands rejecting at most a fraction `r` of the set.
///
/// Accuracies are compared as exact fractions. Ties go to the lowest
/// rejection count, then the narrowest band, then the smallest lower bound.
pub fn tradeoff_curve(set: &ScoredSet, budgets: &[f64]) -> Result<TradeoffCurve, DecisionError> {
    set.require_nonempty()?;
    let sorted = budgets.windows(2).all(|w| w[0] <= w[1]);
    if !sorted || budgets.iter().any(|b| !(0.0..1.0).contains(b)) {
        return Err(DecisionError::InvalidBudgets);
    }
    let grid = Grid::new(set);
    let m = grid.len();
    let n = grid.n as f64;
    let mut points = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        // (correct, accepted, rejected, i, j)
        let mut best: Option<(u64, u64, u64, usize, usize)> = None;
        for i in 0..m {
            for j in i..m {
                let c = grid.counts(i, j);
                if c.rejected as f64 / n > budget {
                    continue;
                }
                let accepted = grid.n - c.rejected;
                let better = match best {
                    None => true,
                    Some((bc, ba, br, bi, bj)) => {
                        let lhs = c.correct as u128 * ba as u128;
                        let rhs = bc as u128 * accepted as u128;
                        lhs > rhs || (lhs == rhs && (c.rejected, j - i, i) < (br, bj - bi, bi))
                    }
                };
                if better {
                    best = Some((c.correct, accepted, c.rejected, i, j));
                }
            }
        }
        // The zero-width band at any candidate rejects nothing, so every
        // budget has a feasible band.
        let (correct, accepted, rejected, i, j) = best.expect("no-rejection band is feasible");
        points.push(TradeoffPoint {
            rejection_budget: budget,
            best_accuracy: correct as f64 / accepted as f64,
            achieved_rejection: rejected as f64 / n,
            band: ThresholdBand::derived(grid.thresholds[i], grid.thresholds[j])?,
        });
    }
    Ok(TradeoffCurve { points })
}
