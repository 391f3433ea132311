//! Brute-force reference implementations of band calibration and the
//! tradeoff curve. Every candidate pair is scored by classifying each item
//! on its own, with no prefix sums or shared code with the library search.

#![allow(dead_code)]

use markguard_core::decision::{Label, ScoredSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Thresholds at 0, 1 and midpoints between consecutive distinct scores.
pub fn grid(set: &ScoredSet) -> Vec<f64> {
    let mut s: Vec<f64> = set.items.iter().map(|i| i.score).collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s.dedup();
    let mut g = vec![0.0, 1.0];
    for w in s.windows(2) {
        g.push((w[0] + w[1]) / 2.0);
    }
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    g.dedup();
    g
}

/// Per-item outcome tallies of one band.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tally {
    pub false_genuine: u64,
    pub false_counterfeit: u64,
    pub rejected: u64,
    pub correct: u64,
}

pub fn tally(set: &ScoredSet, lower: f64, upper: f64) -> Tally {
    let mut t = Tally::default();
    for it in &set.items {
        let genuine = it.truth == Label::Genuine;
        if it.score > upper {
            if genuine { t.correct += 1 } else { t.false_genuine += 1 }
        } else if it.score <= lower {
            if genuine { t.false_counterfeit += 1 } else { t.correct += 1 }
        } else {
            t.rejected += 1;
        }
    }
    t
}

pub struct Exhaustive {
    pub bands: Vec<(f64, f64, Tally)>,
    pub n: u64,
}

pub fn enumerate(set: &ScoredSet) -> Exhaustive {
    let g = grid(set);
    let mut bands = Vec::new();
    for (i, &l) in g.iter().enumerate() {
        for &u in &g[i..] {
            bands.push((l, u, tally(set, l, u)));
        }
    }
    Exhaustive {
        bands,
        n: set.len() as u64,
    }
}

impl Exhaustive {
    /// Minimum mean cost and the fewest rejections among minimizers.
    pub fn min_cost(&self, fg: f64, fc: f64, rej: f64) -> (f64, u64) {
        let cost = |t: &Tally| {
            (fg * t.false_genuine as f64 + fc * t.false_counterfeit as f64 + rej * t.rejected as f64)
                / self.n as f64
        };
        let best = self
            .bands
            .iter()
            .map(|b| cost(&b.2))
            .fold(f64::INFINITY, f64::min);
        let fewest = self
            .bands
            .iter()
            .filter(|b| (cost(&b.2) - best).abs() <= 1e-12)
            .map(|b| b.2.rejected)
            .min()
            .unwrap();
        (best, fewest)
    }

    /// Best accuracy over accepted items among bands rejecting at most
    /// `budget` of the set, as an exact ratio `(correct, accepted)`.
    pub fn best_accuracy(&self, budget: f64) -> (u64, u64) {
        let mut best: Option<(u64, u64)> = None;
        for (_, _, t) in &self.bands {
            if t.rejected as f64 / self.n as f64 > budget {
                continue;
            }
            let acc = self.n - t.rejected;
            if acc == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((c, a)) => (t.correct as u128) * (a as u128) > (c as u128) * (acc as u128),
            };
            if better {
                best = Some((t.correct, acc));
            }
        }
        best.unwrap()
    }
}

/// A random labelled set of `1..=max_n` items. Half the sets use scores
/// rounded to two decimals so ties and repeated scores occur.
pub fn random_set(rng: &mut ChaCha8Rng, max_n: usize) -> ScoredSet {
    let n = rng.random_range(1..=max_n);
    let coarse = rng.random_bool(0.5);
    let sep: f64 = rng.random_range(0.0..0.4);
    let pairs = (0..n).map(|_| {
        let genuine = rng.random_bool(0.5);
        let centre = if genuine { 0.5 + sep / 2.0 } else { 0.5 - sep / 2.0 };
        let mut s: f64 = (centre + rng.random_range(-0.45..0.45f64)).clamp(0.0, 1.0);
        if coarse {
            s = (s * 100.0).round() / 100.0;
        }
        (s, if genuine { Label::Genuine } else { Label::Counterfeit })
    });
    ScoredSet::from_pairs(pairs.collect::<Vec<_>>()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pairwise AUC: the fraction of (genuine, counterfeit) pairs ordered
/// correctly, ties counting one half.
pub fn pairwise_auc(set: &ScoredSet) -> Option<f64> {
    let g: Vec<f64> = set.items.iter().filter(|i| i.truth == Label::Genuine).map(|i| i.score).collect();
    let c: Vec<f64> = set.items.iter().filter(|i| i.truth == Label::Counterfeit).map(|i| i.score).collect();
    if g.is_empty() || c.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for a in &g {
        for b in &c {
            wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
    }
    Some(wins / (g.len() * c.len()) as f64)
}
