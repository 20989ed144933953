//! Training objectives.
//!
//! Every loss is built on a [`Graph`] so it can be differentiated, and has a
//! value-level wrapper (`loss_*`) taking plain matrices. `sim(·,·)` is cosine
//! similarity throughout. Labels are `0` for real and `1` for fake.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::config::{warmup_weight, LossWeights};
use crate::error::{Error, Result};

pub const HEAD_W: &str = "head.weight";
pub const HEAD_B: &str = "head.bias";

fn check_rows_nonzero(g: &Graph, v: Var, context: &str) -> Result<()> {
    for (i, row) in g.value(v).rows().into_iter().enumerate() {
        if row.iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroNorm {
                context: context.to_string(),
                row: i,
            });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("{context}: non-finite row {i}")));
        }
    }
    Ok(())
}

fn check_same_shape(g: &Graph, a: Var, b: Var, context: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(
            context,
            format!("{:?}", g.shape(a)),
            format!("{:?}", g.shape(b)),
        ));
    }
    Ok(())
}

fn check_labels(labels: &[u8], n: usize, context: &str) -> Result<()> {
    if labels.len() != n {
        return Err(Error::shape(context, n, labels.len()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidArgument(format!("{context}: label {bad} is not binary")));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// `N × 1` row-wise cosine similarity.
fn row_cosine(g: &mut Graph, a: Var, b: Var) -> Var {
    let na = g.normalize_rows(a);
    let nb = g.normalize_rows(b);
    let p = g.mul(na, nb);
    g.sum_cols(p)
}

/// `N × N` matrix of pairwise cosine similarities `sim(a_i, b_j)`.
fn cosine_matrix(g: &mut Graph, a: Var, b: Var) -> Var {
    let na = g.normalize_rows(a);
    let nb = g.normalize_rows(b);
    let nbt = g.transpose(nb);
    g.matmul(na, nbt)
}

fn off_diagonal(n: usize) -> Tensor {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 })
}

/// Symmetric image↔text contrastive loss over index-matched pairs.
pub fn pre(g: &mut Graph, f: Var, t: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    check_same_shape(g, f, t, "loss_pre")?;
    check_rows_nonzero(g, f, "loss_pre image features")?;
    check_rows_nonzero(g, t, "loss_pre text features")?;
    let n = g.shape(f).0;
    let s = cosine_matrix(g, f, t);
    let s = g.scale(s, 1.0 / tau);
    let eye = Tensor::eye(n);
    let i2t = g.log_softmax_rows(s);
    let st = g.transpose(s);
    let t2i = g.log_softmax_rows(st);
    let d1 = g.mul_const(i2t, eye.clone());
    let d2 = g.mul_const(t2i, eye);
    let a = g.sum(d1);
    let b = g.sum(d2);
    let both = g.add(a, b);
    Ok(g.scale(both, -1.0 / (2.0 * n as f64)))
}

/// Mean absolute cosine similarity between paired rows.
pub fn dis(g: &mut Graph, fa: Var, fb: Var) -> Result<Var> {
    check_same_shape(g, fa, fb, "loss_dis")?;
    check_rows_nonzero(g, fa, "loss_dis f_A")?;
    check_rows_nonzero(g, fb, "loss_dis f_B")?;
    let n = g.shape(fa).0;
    let c = row_cosine(g, fa, fb);
    let a = g.abs(c);
    let s = g.sum(a);
    Ok(g.scale(s, 1.0 / n as f64))
}

fn mean_pairwise_cosine(g: &mut Graph, t: Var) -> Var {
    let n = g.shape(t).0;
    let s = cosine_matrix(g, t, t);
    let off = g.mul_const(s, off_diagonal(n));
    let sum = g.sum(off);
    g.scale(sum, 1.0 / (n * (n - 1)) as f64)
}

/// Mean pairwise cosine similarity over `i ≠ j`, per stream, summed over both streams.
pub fn div(g: &mut Graph, ta: Var, tb: Var) -> Result<Var> {
    for (v, ctx) in [(ta, "loss_div T_A"), (tb, "loss_div T_B")] {
        if g.shape(v).0 < 2 {
            return Err(Error::InvalidArgument(format!("{ctx}: need at least 2 rows")));
        }
        check_rows_nonzero(g, v, ctx)?;
    }
    let a = mean_pairwise_cosine(g, ta);
    let b = mean_pairwise_cosine(g, tb);
    Ok(g.add(a, b))
}

/// Unweighted parts of the asymmetric alignment loss and their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct AlignTerms {
    /// `−mean sim(f_B, σ(T_B))` over all samples.
    pub irrelevant: Var,
    /// `−mean_fake sim(f_A, σ(T_A)) + mean_real sim(f_A, σ(T_A))`.
    pub specific: Var,
    pub total: Var,
}

/// Asymmetric alignment: every `f_B` is pulled toward its projected prompt;
/// `f_A` is pulled toward its prompt for fakes and pushed away for reals.
/// A label subset that is empty contributes zero.
#[allow(clippy::too_many_arguments)]
pub fn align(
    g: &mut Graph,
    fa: Var,
    fb: Var,
    ta_proj: Var,
    tb_proj: Var,
    labels: &[u8],
    w_spec: f64,
    w_irr: f64,
) -> Result<AlignTerms> {
    check_same_shape(g, fa, ta_proj, "loss_align A")?;
    check_same_shape(g, fb, tb_proj, "loss_align B")?;
    check_same_shape(g, fa, fb, "loss_align f_A/f_B")?;
    let n = g.shape(fa).0;
    if n == 0 {
        return Err(Error::InvalidArgument("loss_align: empty batch".into()));
    }
    check_labels(labels, n, "loss_align labels")?;
    for (v, ctx) in [
        (fa, "loss_align f_A"),
        (fb, "loss_align f_B"),
        (ta_proj, "loss_align σ(T_A)"),
        (tb_proj, "loss_align σ(T_B)"),
    ] {
        check_rows_nonzero(g, v, ctx)?;
    }

    let cb = row_cosine(g, fb, tb_proj);
    let sb = g.sum(cb);
    let irrelevant = g.scale(sb, -1.0 / n as f64);

    let ca = row_cosine(g, fa, ta_proj);
    let n_fake = labels.iter().filter(|&&y| y == 1).count();
    let n_real = n - n_fake;
    let fake_w = Tensor::from_shape_fn((n, 1), |(i, _)| {
        if labels[i] == 1 {
            -1.0 / n_fake as f64
        } else if n_real > 0 {
            1.0 / n_real as f64
        } else {
            0.0
        }
    });
    let signed = g.mul_const(ca, fake_w);
    let specific = g.sum(signed);

    let wi = g.scale(irrelevant, w_irr);
    let ws = g.scale(specific, w_spec);
    let total = g.add(wi, ws);
    Ok(AlignTerms {
        irrelevant,
        specific,
        total,
    })
}

/// Supervised contrastive loss on ℓ2-normalized rows, summed over positive pairs
/// and divided by the batch size. Anchors without a positive contribute zero.
pub fn con(g: &mut Graph, f: Var, labels: &[u8], tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let n = g.shape(f).0;
    if n < 2 {
        return Err(Error::InvalidArgument("loss_con: need at least 2 rows".into()));
    }
    check_labels(labels, n, "loss_con labels")?;
    check_rows_nonzero(g, f, "loss_con features")?;
    let pos = Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && labels[i] == labels[j] {
            1.0
        } else {
            0.0
        }
    });
    let n_pos = Tensor::from_shape_fn((n, 1), |(i, _)| pos.row(i).sum());
    let s = cosine_matrix(g, f, f);
    let s = g.scale(s, 1.0 / tau);
    let lse = g.logsumexp_rows(s, Some(off_diagonal(n)));
    let pos_logits = g.mul_const(s, pos);
    let a = g.sum(pos_logits);
    let weighted_lse = g.mul_const(lse, n_pos);
    let b = g.sum(weighted_lse);
    let diff = g.sub(b, a);
    Ok(g.scale(diff, 1.0 / n as f64))
}

/// Mean softmax cross-entropy of `N × 2` logits.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[u8]) -> Result<Var> {
    let (n, c) = g.shape(logits);
    if c != 2 {
        return Err(Error::shape("cross_entropy classes", 2, c));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("cross_entropy: empty batch".into()));
    }
    check_labels(labels, n, "cross_entropy labels")?;
    let onehot = Tensor::from_shape_fn((n, 2), |(i, j)| if labels[i] as usize == j { 1.0 } else { 0.0 });
    let ls = g.log_softmax_rows(logits);
    let picked = g.mul_const(ls, onehot);
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0 / n as f64))
}

/// Linear classifier head `joint_dim → 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ClassifierHead {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: Tensor::zeros((dim, 2)),
            bias: Tensor::zeros((1, 2)),
        }
    }
}

pub fn head_logits(g: &mut Graph, fa: Var, w: Var, b: Var) -> Result<Var> {
    if g.shape(fa).1 != g.shape(w).0 {
        return Err(Error::shape("classifier head", g.shape(w).0, g.shape(fa).1));
    }
    let z = g.matmul(fa, w);
    Ok(g.add_row(z, b))
}

/// Cross-entropy of the classifier head applied to `f_A`.
pub fn cls(g: &mut Graph, fa: Var, w: Var, b: Var, labels: &[u8]) -> Result<Var> {
    let logits = head_logits(g, fa, w, b)?;
    cross_entropy(g, logits, labels)
}

fn eval(inputs: &[&Tensor], f: impl FnOnce(&mut Graph, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant((*t).clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.scalar(out))
}

pub fn loss_pre(f: &Tensor, t: &Tensor, tau: f64) -> Result<f64> {
    eval(&[f, t], |g, v| pre(g, v[0], v[1], tau))
}

pub fn loss_dis(fa: &Tensor, fb: &Tensor) -> Result<f64> {
    eval(&[fa, fb], |g, v| dis(g, v[0], v[1]))
}

pub fn loss_div(ta: &Tensor, tb: &Tensor) -> Result<f64> {
    eval(&[ta, tb], |g, v| div(g, v[0], v[1]))
}

#[allow(clippy::too_many_arguments)]
pub fn loss_align(
    fa: &Tensor,
    fb: &Tensor,
    ta_proj: &Tensor,
    tb_proj: &Tensor,
    labels: &[u8],
    w_spec: f64,
    w_irr: f64,
) -> Result<f64> {
    eval(&[fa, fb, ta_proj, tb_proj], |g, v| {
        Ok(align(g, v[0], v[1], v[2], v[3], labels, w_spec, w_irr)?.total)
    })
}

pub fn loss_con(f: &Tensor, labels: &[u8], tau: f64) -> Result<f64> {
    eval(&[f], |g, v| con(g, v[0], labels, tau))
}

pub fn loss_cls(fa: &Tensor, head: &ClassifierHead, labels: &[u8]) -> Result<f64> {
    eval(&[fa, &head.weight, &head.bias], |g, v| cls(g, v[0], v[1], v[2], labels))
}

pub fn cross_entropy_logits(logits: &Tensor, labels: &[u8]) -> Result<f64> {
    eval(&[logits], |g, v| cross_entropy(g, v[0], labels))
}

/// Unweighted per-term values of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RawTerms {
    pub cls: f64,
    pub dis: f64,
    pub div: f64,
    pub align_specific: f64,
    pub align_irrelevant: f64,
    pub con: f64,
}

/// Loss weights after warm-up at one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectiveWeights {
    pub dis: f64,
    pub div: f64,
    pub align_specific: f64,
    pub align_irrelevant: f64,
    pub con: f64,
}

impl EffectiveWeights {
    /// Every auxiliary weight ramped by [`warmup_weight`]; the classification term is not ramped.
    pub fn at(w: &LossWeights, step: usize, total_steps: usize) -> Result<Self> {
        let r = |base| warmup_weight(base, step, total_steps, w.warmup_ratio);
        Ok(Self {
            dis: r(w.lambda1)?,
            div: r(w.lambda2)?,
            align_specific: r(w.lambda3_specific)?,
            align_irrelevant: r(w.lambda3_irrelevant)?,
            con: r(w.lambda4)?,
        })
    }
}

/// Per-term values, effective weights and the weighted total of one batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub pre: Option<f64>,
    pub cls: Option<f64>,
    pub dis: Option<f64>,
    pub div: Option<f64>,
    /// Weighted alignment loss `w_irr·irrelevant + w_spec·specific`.
    pub align: Option<f64>,
    pub align_specific: Option<f64>,
    pub align_irrelevant: Option<f64>,
    pub con: Option<f64>,
    pub weights: Option<EffectiveWeights>,
    pub total: f64,
}

impl LossReport {
    pub fn pretraining(pre: f64) -> Self {
        Self {
            pre: Some(pre),
            total: pre,
            ..Self::default()
        }
    }

    /// The weighted objective, summed in the same order as [`total_graph`].
    pub fn from_terms(t: RawTerms, w: EffectiveWeights) -> Self {
        let align = w.align_irrelevant * t.align_irrelevant + w.align_specific * t.align_specific;
        let total = combine_f64(&t, &w);
        Self {
            pre: None,
            cls: Some(t.cls),
            dis: Some(t.dis),
            div: Some(t.div),
            align: Some(align),
            align_specific: Some(t.align_specific),
            align_irrelevant: Some(t.align_irrelevant),
            con: Some(t.con),
            weights: Some(w),
            total,
        }
    }

    /// Recompute the total from the stored parts.
    pub fn recomputed_total(&self) -> Option<f64> {
        if let Some(pre) = self.pre {
            return Some(pre);
        }
        let t = RawTerms {
            cls: self.cls?,
            dis: self.dis?,
            div: self.div?,
            align_specific: self.align_specific?,
            align_irrelevant: self.align_irrelevant?,
            con: self.con?,
        };
        Some(combine_f64(&t, &self.weights?))
    }
}

fn combine_f64(t: &RawTerms, w: &EffectiveWeights) -> f64 {
    let mut total = t.cls;
    total += w.dis * t.dis;
    total += w.div * t.div;
    total += w.align_irrelevant * t.align_irrelevant;
    total += w.align_specific * t.align_specific;
    total += w.con * t.con;
    total
}

/// Graph handles of the raw terms.
#[derive(Clone, Copy, Debug)]
pub struct TermVars {
    pub cls: Var,
    pub dis: Var,
    pub div: Var,
    pub align_specific: Var,
    pub align_irrelevant: Var,
    pub con: Var,
}

/// The weighted objective on the graph.
pub fn total_graph(g: &mut Graph, t: &TermVars, w: &EffectiveWeights) -> Var {
    let mut total = t.cls;
    for (v, k) in [
        (t.dis, w.dis),
        (t.div, w.div),
        (t.align_irrelevant, w.align_irrelevant),
        (t.align_specific, w.align_specific),
        (t.con, w.con),
    ] {
        let s = g.scale(v, k);
        total = g.add(total, s);
    }
    total
}

/// Weighted objective from already computed raw terms at `step` of `total_steps`.
pub fn loss_total(
    terms: RawTerms,
    weights: &LossWeights,
    step: usize,
    total_steps: usize,
) -> Result<LossReport> {
    let w = EffectiveWeights::at(weights, step, total_steps)?;
    Ok(LossReport::from_terms(terms, w))
}
