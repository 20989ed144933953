//! Frozen dual encoder (vision + text) with continuous prompt injection.
//!
//! A backend owns no parameters itself: base weights live in a
//! [`ParamStore`] under [`BASE_PREFIX`] and optional low-rank adapters under
//! [`ADAPTER_PREFIX`]. The text side consumes embedding vectors directly, so
//! learnable context vectors never pass through a tokenizer.
//!
//! [`ToyBackend`] is the only shipped implementation. A pretrained backbone
//! plugs in by implementing [`DualEncoder`] over the same store layout.

mod adapter;
mod toy;

pub use adapter::{inject_adapters, AdapterState, AdapterTarget};
pub use toy::ToyBackend;

use ndarray::{Array1, Axis};

use crate::autograd::{Graph, Tensor, Var};
use crate::data::Image;
use crate::error::Result;
use crate::params::ParamStore;

pub const BASE_PREFIX: &str = "encoder.";
pub const ADAPTER_PREFIX: &str = "adapter.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderDims {
    pub visual_dim: usize,
    pub joint_dim: usize,
    pub text_hidden_dim: usize,
    /// Fixed special-token embeddings added around the prompt content.
    pub n_special: usize,
    /// Prompt content length (conditional vector plus context vectors).
    pub content_len: usize,
}

impl EncoderDims {
    pub fn prompt_len(&self) -> usize {
        self.content_len + self.n_special
    }
}

/// Pooled backbone feature and its projection into the joint space.
#[derive(Clone, Debug, PartialEq)]
pub struct VisionFeature {
    pub pooled: Array1<f64>,
    pub joint: Array1<f64>,
}

/// Token-level text encoder output and the pooled joint-space vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding {
    pub tokens: Tensor,
    pub pooled: Array1<f64>,
}

/// Graph handles for a batch of encoded images (`N × visual_dim`, `N × joint_dim`).
#[derive(Clone, Copy, Debug)]
pub struct VisionVars {
    pub pooled: Var,
    pub joint: Var,
}

/// Graph handles for one encoded prompt (`L × text_hidden_dim`, `1 × joint_dim`).
#[derive(Clone, Copy, Debug)]
pub struct TextVars {
    pub tokens: Var,
    pub pooled: Var,
}

/// Spatial decomposition of the pooled visual feature.
#[derive(Clone, Debug)]
pub struct SpatialTokens {
    pub grid: usize,
    /// `grid² × visual_dim`, raster order; rows sum to `pooled − bias`.
    pub tokens: Tensor,
}

pub trait DualEncoder: Send + Sync {
    fn dims(&self) -> EncoderDims;

    /// Accepted `(height, width, channels)`.
    fn image_dims(&self) -> (usize, usize, usize);

    /// Populate the frozen base weights.
    fn init_base(&self, store: &mut ParamStore);

    /// Linear maps that accept low-rank adapters.
    fn adapter_targets(&self) -> Vec<AdapterTarget>;

    fn encode_images(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        images: &[&Image],
    ) -> Result<VisionVars>;

    /// Place the special-token embeddings around `content` (`content_len × text_hidden_dim`).
    fn wrap_prompt(&self, g: &mut Graph, store: &ParamStore, content: Var) -> Result<Var>;

    fn encode_prompt(&self, g: &mut Graph, store: &ParamStore, tokens: Var) -> Result<TextVars>;

    /// Per-cell contributions to the pooled feature, when the backend has a spatial map.
    fn spatial_tokens(&self, store: &ParamStore, image: &Image) -> Result<Option<SpatialTokens>>;

    fn encode_image(&self, store: &ParamStore, image: &Image) -> Result<VisionFeature> {
        let mut g = Graph::new();
        let v = self.encode_images(&mut g, store, &[image])?;
        Ok(VisionFeature {
            pooled: g.value(v.pooled).row(0).to_owned(),
            joint: g.value(v.joint).row(0).to_owned(),
        })
    }

    fn encode_prompt_tokens(&self, store: &ParamStore, tokens: &Tensor) -> Result<TextEmbedding> {
        let mut g = Graph::new();
        let t = g.constant(tokens.clone());
        let out = self.encode_prompt(&mut g, store, t)?;
        Ok(TextEmbedding {
            tokens: g.value(out.tokens).clone(),
            pooled: g.value(out.pooled).index_axis(Axis(0), 0).to_owned(),
        })
    }
}
