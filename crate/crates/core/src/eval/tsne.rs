//! Exact t-SNE (O(n²) per iteration), for at most a few thousand points.

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::params::normal;

/// Upper bound on projected points; larger sets are subsampled.
pub const MAX_POINTS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    /// `None` picks `max(n / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iters: 1000,
            learning_rate: None,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

/// Sorted indices of at most `max` rows out of `n`, chosen by `seed`.
pub fn sample_indices(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, n, max).into_vec();
    idx.sort_unstable();
    idx
}

fn sq_distances(x: &Tensor) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Row-conditional affinities with per-row bandwidth matched to `perplexity`.
fn conditional_p(d: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = d.nrows();
    let target = perplexity.ln();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        // shift by the nearest neighbour distance for numerical range
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| d[[i, j]])
            .fold(f64::INFINITY, f64::min);
        let mut row = vec![0.0; n];
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut dot = 0.0;
            for j in 0..n {
                row[j] = if j == i { 0.0 } else { (-(d[[i, j]] - dmin) * beta).exp() };
                sum += row[j];
                dot += row[j] * (d[[i, j]] - dmin);
            }
            let entropy = sum.ln() + beta * dot / sum;
            for v in row.iter_mut() {
                *v /= sum;
            }
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        p.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
    }
    p
}

fn joint_p(x: &Tensor, perplexity: f64) -> Array2<f64> {
    let n = x.nrows();
    let cond = conditional_p(&sq_distances(x), perplexity);
    let p = (&cond + &cond.t()) / (2.0 * n as f64);
    p.mapv(|v| v.max(1e-12))
}

/// Student-t affinities `q` (normalized) and the unnormalized kernel.
fn joint_q(y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = y.nrows();
    let mut num = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let d = (y[[i, 0]] - y[[j, 0]]).powi(2) + (y[[i, 1]] - y[[j, 1]]).powi(2);
            let v = 1.0 / (1.0 + d);
            num[[i, j]] = v;
            num[[j, i]] = v;
        }
    }
    let total = num.sum();
    let q = num.mapv(|v| (v / total).max(1e-12));
    (q, num)
}

/// KL(P ‖ Q) of an embedding, for diagnostics.
pub fn kl_divergence(x: &Tensor, y: &Array2<f64>, perplexity: f64) -> f64 {
    let p = joint_p(x, perplexity);
    let (q, _) = joint_q(y);
    let n = p.nrows();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kl += p[[i, j]] * (p[[i, j]] / q[[i, j]]).ln();
            }
        }
    }
    kl
}

/// Effective perplexity for `n` points: at most `(n − 1) / 3`, at least 1.
pub fn effective_perplexity(n: usize, perplexity: f64) -> f64 {
    perplexity.min((n.saturating_sub(1)) as f64 / 3.0).max(1.0)
}

/// `n × 2` embedding of the rows of `x`.
pub fn tsne(x: &Tensor, cfg: &TsneConfig) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n > MAX_POINTS {
        return Err(Error::InvalidArgument(format!(
            "exact t-SNE takes at most {MAX_POINTS} points, got {n}; subsample first"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("t-SNE input has non-finite values".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if n < 3 {
        return Ok(normal(&mut rng, n, 2, 1e-4));
    }
    let p = joint_p(x, effective_perplexity(n, cfg.perplexity));
    let mut y = normal(&mut rng, n, 2, 1e-4);
    let lr = cfg
        .learning_rate
        .unwrap_or_else(|| (n as f64 / cfg.exaggeration / 4.0).max(50.0));
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    for it in 0..cfg.iters {
        let exag = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        let (q, num) = joint_q(&y);
        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            let (mut g0, mut g1) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let m = (exag * p[[i, j]] - q[[i, j]]) * num[[i, j]];
                g0 += m * (y[[i, 0]] - y[[j, 0]]);
                g1 += m * (y[[i, 1]] - y[[j, 1]]);
            }
            grad[[i, 0]] = 4.0 * g0;
            grad[[i, 1]] = 4.0 * g1;
        }
        for ((gain, &g), &u) in gains.iter_mut().zip(&grad).zip(&update) {
            *gain = if (g > 0.0) != (u > 0.0) { *gain + 0.2 } else { (*gain * 0.8).max(0.01) };
        }
        update = momentum * &update - lr * &(&gains * &grad);
        y += &update;
        let mean = y.mean_axis(Axis(0)).expect("n ≥ 3");
        y -= &mean;
    }
    Ok(y)
}
