//! Ranking metrics: ROC AUC, average precision and equal error rate.
//!
//! Label 1 is the positive (fake) class; higher scores mean "more fake".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Metric(format!("non-finite score {s}")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Metric(format!("label {l} is not binary")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "both classes required ({pos} positive, {neg} negative)"
        )));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score.
fn order_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// `(fp, tp)` counts after each distinct threshold, highest first.
fn sweep(scores: &[f64], labels: &[u8]) -> Vec<(usize, usize)> {
    let idx = order_desc(scores);
    let (mut tp, mut fp) = (0, 0);
    let mut out = Vec::new();
    for (k, &i) in idx.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = idx.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push((fp, tp));
        }
    }
    out
}

/// Mann–Whitney AUC: P(fake scores higher) + ½ P(tie), via mid-ranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && scores[idx[e + 1]] == scores[idx[k]] {
            e += 1;
        }
        // ranks k+1..=e+1 share their mean
        let mid = (k + e + 2) as f64 / 2.0;
        rank_sum += mid * idx[k..=e].iter().filter(|&&i| labels[i] == 1).count() as f64;
        k = e + 1;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Average precision: Σ over distinct thresholds of precision × recall increment.
pub fn ap(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    let mut prev_tp = 0;
    let mut total = 0.0;
    for (fp, tp) in sweep(scores, labels) {
        if tp > prev_tp {
            let precision = tp as f64 / (tp + fp) as f64;
            total += precision * (tp - prev_tp) as f64;
            prev_tp = tp;
        }
    }
    Ok((total / pos as f64).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub eer: f64,
    /// The scores were negated because the raw crossing exceeded 0.5.
    pub inverted: bool,
}

/// Crossing of false-positive and false-negative rates, linearly
/// interpolated between adjacent thresholds. No orientation fix.
pub fn eer_raw(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let (p, n) = (pos as f64, neg as f64);
    // threshold +∞: nothing flagged
    let mut prev = (0.0, 1.0);
    for (fp, tp) in sweep(scores, labels) {
        let fpr = fp as f64 / n;
        let fnr = 1.0 - tp as f64 / p;
        let d = fpr - fnr;
        if d >= 0.0 {
            let d0 = prev.0 - prev.1;
            if d == 0.0 {
                return Ok(fpr);
            }
            let a = -d0 / (d - d0);
            return Ok(prev.0 + a * (fpr - prev.0));
        }
        prev = (fpr, fnr);
    }
    unreachable!("the lowest threshold flags everything, so FPR = 1 ≥ FNR = 0")
}

/// EER in canonical orientation: if the crossing exceeds 0.5 the scores are
/// negated and the result is flagged.
pub fn eer(scores: &[f64], labels: &[u8]) -> Result<Eer> {
    let e = eer_raw(scores, labels)?;
    if e > 0.5 {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        Ok(Eer {
            eer: eer_raw(&neg, labels)?,
            inverted: true,
        })
    } else {
        Ok(Eer {
            eer: e,
            inverted: false,
        })
    }
}

/// All three metrics at once.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub ap: f64,
    pub eer: f64,
    pub eer_inverted: bool,
}

pub fn metrics(scores: &[f64], labels: &[u8]) -> Result<Metrics> {
    let e = eer(scores, labels)?;
    Ok(Metrics {
        auc: auc(scores, labels)?,
        ap: ap(scores, labels)?,
        eer: e.eer,
        eer_inverted: e.inverted,
    })
}

/// Fraction of correct hard decisions at `threshold`.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s > threshold) == (l == 1))
        .count();
    hits as f64 / scores.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let s = [0.1, 0.2, 0.8, 0.9];
        let y = [0, 0, 1, 1];
        assert_eq!(auc(&s, &y).unwrap(), 1.0);
        assert_eq!(ap(&s, &y).unwrap(), 1.0);
        assert_eq!(eer(&s, &y).unwrap().eer, 0.0);
    }

    #[test]
    fn all_ties() {
        let s = [0.5; 6];
        let y = [0, 1, 0, 1, 1, 0];
        assert_eq!(auc(&s, &y).unwrap(), 0.5);
        assert_eq!(ap(&s, &y).unwrap(), 0.5);
        assert_eq!(eer(&s, &y).unwrap().eer, 0.5);
    }

    #[test]
    fn inverted_scores_are_reoriented() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let y = [0, 0, 1, 1];
        assert_eq!(auc(&s, &y).unwrap(), 0.0);
        assert_eq!(eer_raw(&s, &y).unwrap(), 1.0);
        let e = eer(&s, &y).unwrap();
        assert!(e.inverted);
        assert_eq!(e.eer, 0.0);
    }

    #[test]
    fn single_class_errors() {
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(ap(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(eer(&[0.1], &[0]).is_err());
        assert!(auc(&[0.1, f64::NAN], &[0, 1]).is_err());
        assert!(auc(&[0.1], &[0, 1]).is_err());
    }

    #[test]
    fn hand_example() {
        // pairs: (0.4 vs 0.3) win, (0.4 vs 0.5) loss, (0.6 vs both) wins → 3/4
        let s = [0.3, 0.5, 0.4, 0.6];
        let y = [0, 0, 1, 1];
        assert_eq!(auc(&s, &y).unwrap(), 0.75);
        // descending: 0.6(+) 0.5(-) 0.4(+) 0.3(-) → 1·½ + (2/3)·½
        assert!((ap(&s, &y).unwrap() - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
        assert!((eer(&s, &y).unwrap().eer - 0.5).abs() < 1e-15);
    }
}
