//! Separable prompts.
//!
//! Each stream owns a meta-network mapping the pooled visual feature to one
//! instance-conditional vector `q`, and `k` global context vectors `C`
//! shared across samples. The prompt is `[q, c_1, …, c_k]`, wrapped in the
//! encoder's special tokens and encoded by the frozen text encoder.

use std::fmt;

use ndarray::{Array1, Axis};
use rand::Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::backend::{DualEncoder, TextEmbedding, TextVars, VisionFeature};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{normal, ParamStore};

/// Prompt stream: `A` is forgery-specific, `B` forgery-irrelevant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    A,
    B,
}

impl Stream {
    pub const BOTH: [Stream; 2] = [Stream::A, Stream::B];

    pub fn tag(self) -> &'static str {
        match self {
            Stream::A => "A",
            Stream::B => "B",
        }
    }

    pub fn prefix(self) -> String {
        format!("prompt.{}.", self.tag())
    }

    pub fn context_name(self) -> String {
        format!("prompt.{}.context", self.tag())
    }

    pub fn meta_prefix(self) -> String {
        format!("prompt.{}.meta.", self.tag())
    }

    fn meta(self, part: &str) -> String {
        format!("prompt.{}.meta.{part}", self.tag())
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Snapshot of one stream's learnable prompt parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptState {
    /// `k × text_hidden_dim` global context.
    pub context: Tensor,
    pub meta_w1: Tensor,
    pub meta_b1: Tensor,
    pub meta_w2: Tensor,
    pub meta_b2: Tensor,
}

impl PromptState {
    /// Context rows `N(0, 0.02²)`; the meta-network's output layer starts at zero so
    /// every prompt begins as pure global context.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (v, h, t) = (cfg.visual_dim, cfg.meta_hidden, cfg.text_hidden_dim);
        Self {
            context: normal(rng, cfg.context_len, t, 0.02),
            meta_w1: normal(rng, v, h, 1.0 / (v as f64).sqrt()),
            meta_b1: Tensor::zeros((1, h)),
            meta_w2: Tensor::zeros((h, t)),
            meta_b2: Tensor::zeros((1, t)),
        }
    }

    pub fn store(self, stream: Stream, store: &mut ParamStore) {
        store.insert(stream.context_name(), self.context);
        store.insert(stream.meta("w1"), self.meta_w1);
        store.insert(stream.meta("b1"), self.meta_b1);
        store.insert(stream.meta("w2"), self.meta_w2);
        store.insert(stream.meta("b2"), self.meta_b2);
    }

    pub fn load(stream: Stream, store: &ParamStore) -> Result<Self> {
        let get = |name: String| {
            store
                .get(&name)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
        };
        Ok(Self {
            context: get(stream.context_name())?,
            meta_w1: get(stream.meta("w1"))?,
            meta_b1: get(stream.meta("b1"))?,
            meta_w2: get(stream.meta("w2"))?,
            meta_b2: get(stream.meta("b2"))?,
        })
    }
}

/// Meta-network on a batch of pooled features: `relu(f·W1 + b1)·W2 + b2`.
pub fn meta_forward(g: &mut Graph, store: &ParamStore, stream: Stream, pooled: Var) -> Result<Var> {
    let w1 = g.param(store, &stream.meta("w1"));
    let want = g.shape(w1).0;
    let got = g.shape(pooled).1;
    if got != want {
        return Err(Error::shape("meta_forward input", want, got));
    }
    let b1 = g.param(store, &stream.meta("b1"));
    let w2 = g.param(store, &stream.meta("w2"));
    let b2 = g.param(store, &stream.meta("b2"));
    let h = g.matmul(pooled, w1);
    let h = g.add_row(h, b1);
    let h = g.relu(h);
    let o = g.matmul(h, w2);
    Ok(g.add_row(o, b2))
}

/// `[q, c_1, …, c_k]` with the encoder's special tokens around it.
pub fn assemble_prompt(
    g: &mut Graph,
    backend: &dyn DualEncoder,
    store: &ParamStore,
    stream: Stream,
    q: Var,
) -> Result<Var> {
    let width = backend.dims().text_hidden_dim;
    if g.shape(q) != (1, width) {
        return Err(Error::shape(
            "assemble_prompt q",
            format!("1×{width}"),
            format!("{:?}", g.shape(q)),
        ));
    }
    let ctx = g.param(store, &stream.context_name());
    let content = g.concat_rows(&[q, ctx]);
    backend.wrap_prompt(g, store, content)
}

/// Encode one prompt per row of `pooled` (`N × visual_dim`).
pub fn encode_stream(
    g: &mut Graph,
    backend: &dyn DualEncoder,
    store: &ParamStore,
    stream: Stream,
    pooled: Var,
) -> Result<Vec<TextVars>> {
    let q = meta_forward(g, store, stream, pooled)?;
    let n = g.shape(q).0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let qi = g.slice_rows(q, i, 1);
        let prompt = assemble_prompt(g, backend, store, stream, qi)?;
        out.push(backend.encode_prompt(g, store, prompt)?);
    }
    Ok(out)
}

/// Value-level meta-network on a single pooled feature.
pub fn meta_forward_values(store: &ParamStore, stream: Stream, f: &Array1<f64>) -> Result<Array1<f64>> {
    let mut g = Graph::new();
    let x = g.constant(f.clone().insert_axis(Axis(0)));
    let q = meta_forward(&mut g, store, stream, x)?;
    Ok(g.value(q).row(0).to_owned())
}

/// Value-level prompt sequence for a given conditional vector.
pub fn assemble_prompt_values(
    backend: &dyn DualEncoder,
    store: &ParamStore,
    stream: Stream,
    q: &Array1<f64>,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let qv = g.constant(q.clone().insert_axis(Axis(0)));
    let p = assemble_prompt(&mut g, backend, store, stream, qv)?;
    Ok(g.value(p).clone())
}

/// Value-level text embedding of one image's prompt.
pub fn encode_stream_values(
    backend: &dyn DualEncoder,
    store: &ParamStore,
    stream: Stream,
    feature: &VisionFeature,
) -> Result<TextEmbedding> {
    let mut g = Graph::new();
    let x = g.constant(feature.pooled.clone().insert_axis(Axis(0)));
    let t = encode_stream(&mut g, backend, store, stream, x)?[0];
    Ok(TextEmbedding {
        tokens: g.value(t.tokens).clone(),
        pooled: g.value(t.pooled).row(0).to_owned(),
    })
}
