//! Cross-modality alignment: the visual feature queries a prompt's token
//! sequence, `f' = FFN(LN(f + CA(f·W_Q, T·W_K, T·W_V)))`.
//!
//! Also holds the text-to-visual projection `σ` and the concatenation fusion
//! used as an ablation alternative to attention.

use rand::Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{normal, ParamStore};
use crate::prompts::Stream;

pub const SIGMA_W: &str = "sigma.weight";
pub const SIGMA_B: &str = "sigma.bias";

const PARTS: [&str; 10] = [
    "wq", "wk", "wv", "wo", "ln_gain", "ln_bias", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
];

fn name(stream: Stream, part: &str) -> String {
    format!("align.{}.{part}", stream.tag())
}

pub fn align_prefix(stream: Stream) -> String {
    format!("align.{}.", stream.tag())
}

/// Parameters of one stream's alignment block.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignBlock {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    /// Output projection after attention; zero at init so the block starts as `FFN(LN(f))`.
    pub wo: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
}

impl AlignBlock {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (j, t) = (cfg.joint_dim, cfg.text_hidden_dim);
        let a = j;
        let hidden = 4 * j;
        let s = |n: usize| 1.0 / (n as f64).sqrt();
        Self {
            wq: normal(rng, j, a, s(j)),
            wk: normal(rng, t, a, s(t)),
            wv: normal(rng, t, a, s(t)),
            wo: Tensor::zeros((a, j)),
            ln_gain: Tensor::ones((1, j)),
            ln_bias: Tensor::zeros((1, j)),
            ffn_w1: normal(rng, j, hidden, s(j)),
            ffn_b1: Tensor::zeros((1, hidden)),
            ffn_w2: normal(rng, hidden, j, s(hidden)),
            ffn_b2: Tensor::zeros((1, j)),
        }
    }

    pub fn store(self, stream: Stream, store: &mut ParamStore) {
        let parts = [
            self.wq,
            self.wk,
            self.wv,
            self.wo,
            self.ln_gain,
            self.ln_bias,
            self.ffn_w1,
            self.ffn_b1,
            self.ffn_w2,
            self.ffn_b2,
        ];
        for (p, t) in PARTS.iter().zip(parts) {
            store.insert(name(stream, p), t);
        }
    }

    pub fn load(stream: Stream, store: &ParamStore) -> Result<Self> {
        let get = |p: &str| {
            let n = name(stream, p);
            store
                .get(&n)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{n}`")))
        };
        Ok(Self {
            wq: get("wq")?,
            wk: get("wk")?,
            wv: get("wv")?,
            wo: get("wo")?,
            ln_gain: get("ln_gain")?,
            ln_bias: get("ln_bias")?,
            ffn_w1: get("ffn_w1")?,
            ffn_b1: get("ffn_b1")?,
            ffn_w2: get("ffn_w2")?,
            ffn_b2: get("ffn_b2")?,
        })
    }
}

/// Aligned feature plus the per-head attention weights over the token sequence.
#[derive(Clone, Debug)]
pub struct Attended {
    pub out: Var,
    pub weights: Vec<Var>,
}

/// Single-query cross-attention of one visual feature (`1 × joint_dim`) over a
/// token sequence (`L × text_hidden_dim`).
pub fn cross_attend(
    g: &mut Graph,
    store: &ParamStore,
    stream: Stream,
    heads: usize,
    f: Var,
    tokens: Var,
) -> Result<Attended> {
    let wq = g.param(store, &name(stream, "wq"));
    let (fr, fc) = g.shape(f);
    if fr != 1 || fc != g.shape(wq).0 {
        return Err(Error::shape(
            "cross_attend query",
            format!("1×{}", g.shape(wq).0),
            format!("{fr}×{fc}"),
        ));
    }
    let q = g.matmul(f, wq);
    attend_with_query(g, store, stream, heads, f, q, tokens)
}

fn attend_with_query(
    g: &mut Graph,
    store: &ParamStore,
    stream: Stream,
    heads: usize,
    f: Var,
    q: Var,
    tokens: Var,
) -> Result<Attended> {
    let wk = g.param(store, &name(stream, "wk"));
    let wv = g.param(store, &name(stream, "wv"));
    let (len, width) = g.shape(tokens);
    if len == 0 {
        return Err(Error::InvalidArgument("cross_attend: empty token sequence".into()));
    }
    if width != g.shape(wk).0 {
        return Err(Error::shape("cross_attend tokens", g.shape(wk).0, width));
    }
    let attn_dim = g.shape(q).1;
    if heads == 0 || !attn_dim.is_multiple_of(heads) {
        return Err(Error::InvalidArgument(format!(
            "{heads} heads do not divide attention width {attn_dim}"
        )));
    }
    let dh = attn_dim / heads;
    let k = g.matmul(tokens, wk);
    let v = g.matmul(tokens, wv);
    let mut ctx_parts = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh),
                g.slice_cols(k, h * dh, dh),
                g.slice_cols(v, h * dh, dh),
            )
        };
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt);
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let w = g.softmax_rows(scores);
        ctx_parts.push(g.matmul(w, vh));
        weights.push(w);
    }
    let ctx = if heads == 1 {
        ctx_parts[0]
    } else {
        g.concat_cols(&ctx_parts)
    };
    let wo = g.param(store, &name(stream, "wo"));
    let ca = g.matmul(ctx, wo);
    let res = g.add(f, ca);
    let out = ffn_ln(g, store, stream, res);
    Ok(Attended { out, weights })
}

fn ffn_ln(g: &mut Graph, store: &ParamStore, stream: Stream, x: Var) -> Var {
    let gain = g.param(store, &name(stream, "ln_gain"));
    let bias = g.param(store, &name(stream, "ln_bias"));
    let w1 = g.param(store, &name(stream, "ffn_w1"));
    let b1 = g.param(store, &name(stream, "ffn_b1"));
    let w2 = g.param(store, &name(stream, "ffn_w2"));
    let b2 = g.param(store, &name(stream, "ffn_b2"));
    let n = g.layer_norm_rows(x, gain, bias);
    let h = g.matmul(n, w1);
    let h = g.add_row(h, b1);
    let h = g.gelu(h);
    let o = g.matmul(h, w2);
    g.add_row(o, b2)
}

/// `FFN(LN(x))` of the stream's block; the cross-attention output with attention removed.
pub fn feed_forward(g: &mut Graph, store: &ParamStore, stream: Stream, x: Var) -> Var {
    ffn_ln(g, store, stream, x)
}

/// Row-wise cross-attention for a batch: row `i` of `f_joint` attends over `tokens[i]`.
pub fn cross_attend_batch(
    g: &mut Graph,
    store: &ParamStore,
    stream: Stream,
    heads: usize,
    f_joint: Var,
    tokens: &[Var],
) -> Result<Var> {
    let n = g.shape(f_joint).0;
    if n != tokens.len() {
        return Err(Error::shape("cross_attend_batch", n, tokens.len()));
    }
    let wq = g.param(store, &name(stream, "wq"));
    if g.shape(f_joint).1 != g.shape(wq).0 {
        return Err(Error::shape("cross_attend_batch query", g.shape(wq).0, g.shape(f_joint).1));
    }
    let q_all = g.matmul(f_joint, wq);
    let mut rows = Vec::with_capacity(n);
    for (i, &t) in tokens.iter().enumerate() {
        let fi = g.slice_rows(f_joint, i, 1);
        let qi = g.slice_rows(q_all, i, 1);
        rows.push(attend_with_query(g, store, stream, heads, fi, qi, t)?.out);
    }
    Ok(g.concat_rows(&rows))
}

/// Initial `σ`: identity weight, zero bias.
pub fn init_sigma(cfg: &ModelConfig, store: &mut ParamStore) {
    store.insert(SIGMA_W, Tensor::eye(cfg.joint_dim));
    store.insert(SIGMA_B, Tensor::zeros((1, cfg.joint_dim)));
}

/// Affine map of pooled text embeddings into the visual feature space.
pub fn project_text(g: &mut Graph, store: &ParamStore, pooled: Var) -> Result<Var> {
    let w = g.param(store, SIGMA_W);
    let b = g.param(store, SIGMA_B);
    if g.shape(pooled).1 != g.shape(w).0 {
        return Err(Error::shape("project_text", g.shape(w).0, g.shape(pooled).1));
    }
    let y = g.matmul(pooled, w);
    Ok(g.add_row(y, b))
}

pub fn fuse_weight(stream: Stream) -> String {
    format!("fuse.{}.weight", stream.tag())
}

pub fn fuse_bias(stream: Stream) -> String {
    format!("fuse.{}.bias", stream.tag())
}

pub fn init_concat_fusion(cfg: &ModelConfig, stream: Stream, store: &mut ParamStore, rng: &mut impl Rng) {
    let j = cfg.joint_dim;
    store.insert(fuse_weight(stream), normal(rng, 2 * j, j, 1.0 / ((2 * j) as f64).sqrt()));
    store.insert(fuse_bias(stream), Tensor::zeros((1, j)));
}

/// Ablation fusion: `[f, T_pooled]·W + b`.
pub fn concat_fuse(
    g: &mut Graph,
    store: &ParamStore,
    stream: Stream,
    f_joint: Var,
    t_pooled: Var,
) -> Result<Var> {
    if g.shape(f_joint).0 != g.shape(t_pooled).0 {
        return Err(Error::shape("concat_fuse rows", g.shape(f_joint).0, g.shape(t_pooled).0));
    }
    let w = g.param(store, &fuse_weight(stream));
    let b = g.param(store, &fuse_bias(stream));
    let x = g.concat_cols(&[f_joint, t_pooled]);
    if g.shape(x).1 != g.shape(w).0 {
        return Err(Error::shape("concat_fuse width", g.shape(w).0, g.shape(x).1));
    }
    let y = g.matmul(x, w);
    Ok(g.add_row(y, b))
}
