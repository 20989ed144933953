//! Exhaustive metric definitions: AUC by counting every (positive, negative)
//! pair, AP and EER by evaluating every candidate threshold separately.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepl::eval::metrics;

pub fn auc(s: &[f64], y: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1.0;
                if s[i] > s[j] {
                    wins += 1.0;
                } else if s[i] == s[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// `(tp, fp)` when everything scoring at least `t` is flagged.
fn counts(s: &[f64], y: &[u8], t: f64) -> (usize, usize) {
    let tp = s.iter().zip(y).filter(|(&v, &l)| v >= t && l == 1).count();
    let fp = s.iter().zip(y).filter(|(&v, &l)| v >= t && l == 0).count();
    (tp, fp)
}

fn thresholds_desc(s: &[f64]) -> Vec<f64> {
    let mut t = s.to_vec();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

pub fn ap(s: &[f64], y: &[u8]) -> f64 {
    let pos = y.iter().filter(|&&l| l == 1).count() as f64;
    let mut prev_recall = 0.0;
    let mut total = 0.0;
    for t in thresholds_desc(s) {
        let (tp, fp) = counts(s, y, t);
        let recall = tp as f64 / pos;
        if tp > 0 {
            total += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        }
        prev_recall = recall;
    }
    total
}

/// Intersection of the polyline through `(FPR, FNR)` at every threshold
/// (plus the "flag nothing" point) with the diagonal FPR = FNR. Every
/// segment is tested; the first crossing in threshold order wins.
pub fn eer_raw(s: &[f64], y: &[u8]) -> f64 {
    let pos = y.iter().filter(|&&l| l == 1).count() as f64;
    let neg = y.len() as f64 - pos;
    let mut pts = vec![(0.0, 1.0)];
    for t in thresholds_desc(s) {
        let (tp, fp) = counts(s, y, t);
        pts.push((fp as f64 / neg, 1.0 - tp as f64 / pos));
    }
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let (d0, d1) = (x0 - y0, x1 - y1);
        if d0 <= 0.0 && d1 >= 0.0 {
            if d1 == 0.0 {
                return x1;
            }
            let a = d0 / (d0 - d1);
            return x0 + a * (x1 - x0);
        }
    }
    panic!("no crossing")
}

pub fn eer(s: &[f64], y: &[u8]) -> (f64, bool) {
    let e = eer_raw(s, y);
    if e > 0.5 {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        (eer_raw(&neg, y), true)
    } else {
        (e, false)
    }
}

/// A random instance with both classes present; half of them use a small
/// score alphabet so ties are common.
pub fn instance(seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=200);
    let tied = seed % 2 == 1;
    let shift: f64 = rng.random_range(0.0..2.0);
    let mut y: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
    y[0] = 0;
    y[n - 1] = 1;
    let s = y
        .iter()
        .map(|&l| {
            if tied {
                rng.random_range(0..6) as f64 + l as f64 * shift.round()
            } else {
                rng.random_range(-1.0..1.0) + l as f64 * shift
            }
        })
        .collect();
    (s, y)
}

#[derive(Debug)]
pub struct MetricSuite {
    pub instances: usize,
    pub max_abs_err: f64,
    pub worst: String,
    pub elapsed: Duration,
}

pub fn run(instances: usize, seed: u64) -> MetricSuite {
    let start = Instant::now();
    let mut suite = MetricSuite {
        instances,
        max_abs_err: 0.0,
        worst: String::new(),
        elapsed: Duration::ZERO,
    };
    for k in 0..instances {
        let (s, y) = instance(seed + k as u64);
        let m = metrics::metrics(&s, &y).unwrap();
        let (e, inv) = eer(&s, &y);
        assert_eq!(m.eer_inverted, inv, "instance {k}: orientation flag");
        for (name, lib, oracle) in [("auc", m.auc, auc(&s, &y)), ("ap", m.ap, ap(&s, &y)), ("eer", m.eer, e)] {
            let err = (lib - oracle).abs();
            if err >= suite.max_abs_err {
                suite.max_abs_err = err;
                suite.worst = format!("{name} instance {k} (n = {}): library {lib}, oracle {oracle}", s.len());
            }
        }
    }
    suite.elapsed = start.elapsed();
    suite
}
