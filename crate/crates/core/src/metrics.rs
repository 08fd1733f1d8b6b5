//! Binary classification metrics.

use serde::{Deserialize, Serialize};

use crate::autodiff::PROB_FLOOR;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// Counts predictions `score > threshold` as positive.
    pub fn from_scores(scores: &[f64], labels: &[usize], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s > threshold, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub auc: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

impl Metrics {
    /// Threshold metrics from a confusion matrix plus a separately computed AUC.
    pub fn from_confusion(c: Confusion, auc: f64) -> Self {
        Metrics {
            acc: ratio(c.tp + c.tn, c.total()),
            auc,
            sen: ratio(c.tp, c.tp + c.fn_),
            spe: ratio(c.tn, c.tn + c.fp),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            confusion: c,
        }
    }

    /// Metrics for class-1 scores. A single-class input has no defined AUC and
    /// reports 0.5.
    pub fn from_scores(scores: &[f64], labels: &[usize], threshold: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty split"));
        }
        if scores.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        let auc = match roc_auc(scores, labels) {
            Ok(a) => a,
            Err(_) => {
                log::warn!("evaluation split has a single class; AUC reported as 0.5");
                0.5
            }
        };
        Ok(Metrics::from_confusion(
            Confusion::from_scores(scores, labels, threshold),
            auc,
        ))
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann–Whitney U / (P·N)), computed from average ranks.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label {bad} is not binary")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("roc_auc scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("roc_auc needs both classes"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// `-ln p[label]` with `p` clamped below at 1e-12.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs
        .get(label)
        .ok_or_else(|| Error::invalid(format!("label {label} for {} classes", probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute force over every positive/negative pair.
    fn auc_pairs(scores: &[f64], labels: &[usize]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if si > sj {
                        wins += 1.0;
                    } else if si == sj {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.2], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(auc_pairs(&[0.9, 0.8, 0.3, 0.2], &[1, 0, 1, 0]), 0.75);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[1, 2]).is_err());
    }

    #[test]
    fn auc_matches_pair_counting_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
            let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let a = roc_auc(&scores, &labels).unwrap();
            assert!((a - auc_pairs(&scores, &labels)).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 27.631021115928547).abs() < 1e-9);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn perfect_and_constant_predictions() {
        let labels = [1, 0, 1, 0];
        let m = Metrics::from_scores(&[0.9, 0.1, 0.8, 0.3], &labels, 0.5).unwrap();
        assert_eq!((m.acc, m.sen, m.spe, m.f1, m.auc), (1.0, 1.0, 1.0, 1.0, 1.0));
        let m = Metrics::from_scores(&[0.2; 4], &labels, 0.5).unwrap();
        assert_eq!((m.acc, m.sen, m.spe, m.f1), (0.5, 0.0, 1.0, 0.0));
        assert!(Metrics::from_scores(&[], &[], 0.5).is_err());
    }

    #[test]
    fn hand_filled_confusion() {
        // scores  0.9 0.7 0.6 0.4 0.3 0.2
        // labels    1   0   1   1   0   0
        // predict   1   1   1   0   0   0  -> tp 2, fp 1, fn 1, tn 2
        let scores = [0.9, 0.7, 0.6, 0.4, 0.3, 0.2];
        let labels = [1, 0, 1, 1, 0, 0];
        let m = Metrics::from_scores(&scores, &labels, 0.5).unwrap();
        assert_eq!(
            m.confusion,
            Confusion {
                tp: 2,
                fp: 1,
                tn: 2,
                fn_: 1
            }
        );
        assert_eq!(m.acc, 4.0 / 6.0);
        assert_eq!(m.sen, 2.0 / 3.0);
        assert_eq!(m.spe, 2.0 / 3.0);
        assert_eq!(m.f1, 4.0 / 6.0);
        // pairs won: (0.9: 3) + (0.6: 2) + (0.4: 2) = 7 of 9
        assert_eq!(m.auc, 7.0 / 9.0);
    }

    #[test]
    fn confusion_serializes_fn_key() {
        let json = serde_json::to_string(&Confusion {
            tp: 1,
            fp: 2,
            tn: 3,
            fn_: 4,
        })
        .unwrap();
        assert_eq!(json, r#"{"tp":1,"fp":2,"tn":3,"fn":4}"#);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn auc_invariant_under_monotone_transform(
                scores in proptest::collection::vec(-5.0f64..5.0, 4..60),
                seed in any::<u64>(),
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut labels: Vec<usize> = scores.iter().map(|_| rng.random_range(0..2)).collect();
                labels[0] = 0;
                labels[1] = 1;
                let a = roc_auc(&scores, &labels).unwrap();
                let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
                prop_assert!((a - roc_auc(&t, &labels).unwrap()).abs() < 1e-12);
            }
        }
    }
}
