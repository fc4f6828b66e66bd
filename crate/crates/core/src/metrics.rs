//! Liveness metrics. Scores are liveness probabilities: higher means more
//! likely real.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Class;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub labels: Vec<Class>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<Class>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("score {bad}")));
        }
        Ok(Self { scores, labels })
    }

    pub fn from_parts(real: &[f64], spoof: &[f64]) -> Result<Self> {
        let scores = real.iter().chain(spoof).copied().collect();
        let labels = std::iter::repeat(Class::Real)
            .take(real.len())
            .chain(std::iter::repeat(Class::Spoof).take(spoof.len()))
            .collect();
        Self::new(scores, labels)
    }

    fn counts(&self) -> Result<(usize, usize)> {
        let real = self.labels.iter().filter(|c| c.is_real()).count();
        let spoof = self.labels.len() - real;
        if real == 0 || spoof == 0 {
            return Err(Error::InvalidArgument(
                "metrics need both real and spoof samples".into(),
            ));
        }
        Ok((real, spoof))
    }

    /// Indices sorted by ascending score; equal scores keep input order.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        idx
    }
}

/// Probability that a random real sample outscores a random spoof, with
/// ties counted one half (Mann-Whitney U with mid-ranks).
pub fn auc(set: &ScoreSet) -> Result<f64> {
    let (nr, ns) = set.counts()?;
    let order = set.order();
    // Twice the rank sum keeps mid-ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        let reals = order[i..=j].iter().filter(|&&k| set.labels[k].is_real()).count() as u128;
        twice_rank_sum += twice_mid * reals;
        i = j + 1;
    }
    let nr128 = nr as u128;
    let twice_u = twice_rank_sum - nr128 * (nr128 + 1);
    Ok(twice_u as f64 / (2.0 * nr as f64 * ns as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub eer: f64,
    pub threshold: f64,
    pub hter: f64,
    pub far: f64,
    pub frr: f64,
}

/// Equal error rate over thresholds at the observed scores, with
/// `FRR(τ) = P(real < τ)` and `FAR(τ) = P(spoof ≥ τ)`. The chosen threshold
/// minimizes `|FAR − FRR|` (lowest on ties); HTER is evaluated at that same
/// threshold and so equals the EER.
pub fn eer_hter(set: &ScoreSet) -> Result<ErrorRates> {
    let (nr, ns) = set.counts()?;
    let order = set.order();
    let mut best: Option<(f64, ErrorRates)> = None;
    let mut real_below = 0usize;
    let mut spoof_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let tau = set.scores[order[i]];
        let frr = real_below as f64 / nr as f64;
        let far = (ns - spoof_below) as f64 / ns as f64;
        let gap = (far - frr).abs();
        if best.as_ref().map_or(true, |(g, _)| gap < *g) {
            let rate = (far + frr) / 2.0;
            best = Some((
                gap,
                ErrorRates {
                    eer: rate,
                    threshold: tau,
                    hter: rate,
                    far,
                    frr,
                },
            ));
        }
        while i < order.len() && set.scores[order[i]] == tau {
            if set.labels[order[i]].is_real() {
                real_below += 1;
            } else {
                spoof_below += 1;
            }
            i += 1;
        }
    }
    Ok(best.expect("non-empty score set").1)
}

/// ROC points `(FPR, TPR)` from the strictest threshold to the loosest,
/// always starting at `(0, 0)` and ending at `(1, 1)`.
pub fn roc_points(set: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    let (nr, ns) = set.counts()?;
    let mut order = set.order();
    order.reverse();
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let tau = set.scores[order[i]];
        while i < order.len() && set.scores[order[i]] == tau {
            if set.labels[order[i]].is_real() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / ns as f64, tp as f64 / nr as f64));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&ScoreSet::from_parts(&[0.9, 0.8], &[0.1, 0.2]).unwrap()).unwrap(), 1.0);
        assert_eq!(auc(&ScoreSet::from_parts(&[0.5, 0.5], &[0.5, 0.5, 0.5]).unwrap()).unwrap(), 0.5);
        assert_eq!(auc(&ScoreSet::from_parts(&[0.9, 0.4], &[0.6, 0.1]).unwrap()).unwrap(), 0.75);
        assert!(auc(&ScoreSet::from_parts(&[0.9], &[]).unwrap()).is_err());
    }

    #[test]
    fn eer_examples() {
        let r = eer_hter(&ScoreSet::from_parts(&[0.9, 0.8], &[0.1, 0.2]).unwrap()).unwrap();
        assert_eq!((r.eer, r.hter), (0.0, 0.0));
        let r = eer_hter(&ScoreSet::from_parts(&[0.9, 0.4], &[0.6, 0.1]).unwrap()).unwrap();
        assert_eq!((r.threshold, r.far, r.frr, r.hter), (0.6, 0.5, 0.5, 0.5));
        assert!(eer_hter(&ScoreSet::from_parts(&[], &[0.3]).unwrap()).is_err());
    }

    #[test]
    fn roc_endpoints() {
        let pts = roc_points(&ScoreSet::from_parts(&[0.9, 0.4], &[0.6, 0.1]).unwrap()).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
    }
}
