//! Brute-force loss definitions on nested `Vec`s, written from the formulas
//! with plain loops and no shared code with the library's graph versions.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepl::losses::{self, ClassifierHead};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Array2<f64>) -> Mat {
    t.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn pre(f: &Mat, t: &Mat, tau: f64) -> f64 {
    let n = f.len();
    let mut total = 0.0;
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| cos(&f[i], &t[j]) / tau).collect();
        total += row[i] - log_sum_exp(&row);
        let col: Vec<f64> = (0..n).map(|j| cos(&f[j], &t[i]) / tau).collect();
        total += col[i] - log_sum_exp(&col);
    }
    -total / (2.0 * n as f64)
}

pub fn dis(fa: &Mat, fb: &Mat) -> f64 {
    fa.iter().zip(fb).map(|(a, b)| cos(a, b).abs()).sum::<f64>() / fa.len() as f64
}

pub fn div(ta: &Mat, tb: &Mat) -> f64 {
    let one = |t: &Mat| {
        let n = t.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += cos(&t[i], &t[j]);
                }
            }
        }
        s / (n * (n - 1)) as f64
    };
    one(ta) + one(tb)
}

pub fn align(fa: &Mat, fb: &Mat, ta: &Mat, tb: &Mat, y: &[u8], w_spec: f64, w_irr: f64) -> f64 {
    let n = fa.len();
    let irr = -(0..n).map(|i| cos(&fb[i], &tb[i])).sum::<f64>() / n as f64;
    let mean_over = |label: u8| {
        let v: Vec<f64> = (0..n).filter(|&i| y[i] == label).map(|i| cos(&fa[i], &ta[i])).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let spec = -mean_over(1) + mean_over(0);
    w_irr * irr + w_spec * spec
}

pub fn con(f: &Mat, y: &[u8], tau: f64) -> f64 {
    let n = f.len();
    let mut total = 0.0;
    for i in 0..n {
        let others: Vec<f64> = (0..n).filter(|&a| a != i).map(|a| cos(&f[i], &f[a]) / tau).collect();
        let lse = log_sum_exp(&others);
        for p in 0..n {
            if p != i && y[p] == y[i] {
                total -= cos(&f[i], &f[p]) / tau - lse;
            }
        }
    }
    total / n as f64
}

pub fn cls(fa: &Mat, w: &Mat, b: &[f64], y: &[u8]) -> f64 {
    let n = fa.len();
    let mut total = 0.0;
    for i in 0..n {
        let z: Vec<f64> = (0..2)
            .map(|c| (0..fa[i].len()).map(|k| fa[i][k] * w[k][c]).sum::<f64>() + b[c])
            .collect();
        total -= z[y[i] as usize] - log_sum_exp(&z);
    }
    total / n as f64
}

pub fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

pub fn labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_bool(0.5) as u8).collect()
}

#[derive(Debug)]
pub struct LossSuite {
    pub batches: usize,
    pub comparisons: usize,
    pub max_abs_err: f64,
    pub worst: String,
    pub elapsed: Duration,
}

/// Compare all six library losses against the oracles on `batches` seeded batches.
pub fn run(batches: usize, seed: u64) -> LossSuite {
    let start = Instant::now();
    let mut suite = LossSuite {
        batches,
        comparisons: 0,
        max_abs_err: 0.0,
        worst: String::new(),
        elapsed: Duration::ZERO,
    };
    let mut record = |name: &str, lib: f64, oracle: f64, b: usize| {
        let e = (lib - oracle).abs();
        assert!(e.is_finite(), "{name} batch {b}: {lib} vs {oracle}");
        suite.comparisons += 1;
        if e >= suite.max_abs_err {
            suite.max_abs_err = e;
            suite.worst = format!("{name} batch {b}: library {lib}, oracle {oracle}");
        }
    };
    for b in 0..batches {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64));
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=10);
        let tau = rng.random_range(0.05..1.0);
        let y = labels(&mut rng, n);
        let (f, t) = (random(&mut rng, n, d), random(&mut rng, n, d));
        let (fa, fb) = (random(&mut rng, n, d), random(&mut rng, n, d));
        let (ta, tb) = (random(&mut rng, n, d), random(&mut rng, n, d));
        let (ws, wi) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let head = ClassifierHead {
            weight: random(&mut rng, d, 2),
            bias: random(&mut rng, 1, 2),
        };
        let m = to_mat;

        record("pre", losses::loss_pre(&f, &t, tau).unwrap(), pre(&m(&f), &m(&t), tau), b);
        record("dis", losses::loss_dis(&fa, &fb).unwrap(), dis(&m(&fa), &m(&fb)), b);
        record("div", losses::loss_div(&ta, &tb).unwrap(), div(&m(&ta), &m(&tb)), b);
        record(
            "align",
            losses::loss_align(&fa, &fb, &ta, &tb, &y, ws, wi).unwrap(),
            align(&m(&fa), &m(&fb), &m(&ta), &m(&tb), &y, ws, wi),
            b,
        );
        record("con", losses::loss_con(&f, &y, tau).unwrap(), con(&m(&f), &y, tau), b);
        record(
            "cls",
            losses::loss_cls(&fa, &head, &y).unwrap(),
            cls(&m(&fa), &m(&head.weight), head.bias.row(0).as_slice().unwrap(), &y),
            b,
        );
    }
    suite.elapsed = start.elapsed();
    suite
}
