use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adapter::{adapted_linear, AdapterTarget};
use super::{DualEncoder, EncoderDims, SpatialTokens, TextVars, VisionVars};
use crate::autograd::{Graph, Tensor, Var};
use crate::config::ModelConfig;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::params::{normal, ParamStore};

const N_SPECIAL: usize = 2;
const CHANNELS: usize = 3;

const PATCH_W: &str = "encoder.vision.patch.weight";
const PATCH_B: &str = "encoder.vision.patch.bias";
const PROJ_W: &str = "encoder.vision.proj.weight";
const PROJ_B: &str = "encoder.vision.proj.bias";
const TOKEN_W: &str = "encoder.text.token.weight";
const TEXT_PROJ_W: &str = "encoder.text.proj.weight";
const TEXT_PROJ_B: &str = "encoder.text.proj.bias";
const SPECIAL: &str = "encoder.text.special";

/// Deterministic linear stand-in for a pretrained dual encoder.
///
/// Vision: the image is cut into a `grid × grid` array of patches, every
/// patch goes through one shared linear embedding (as in a ViT), and the
/// pooled feature (`visual_dim`) is the mean of the patch embeddings; a
/// second linear map gives the joint feature (`joint_dim`). The per-patch
/// embeddings are the backend's spatial token map.
///
/// Text: tokens pass through a fixed linear map; the pooled embedding is the
/// mean of the input embeddings under a fixed linear map into the joint
/// space. A start and an end special token wrap every prompt.
#[derive(Clone, Debug)]
pub struct ToyBackend {
    seed: u64,
    image_size: usize,
    grid: usize,
    dims: EncoderDims,
}

impl ToyBackend {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            seed,
            image_size: cfg.image_size,
            grid: cfg.grid,
            dims: EncoderDims {
                visual_dim: cfg.visual_dim,
                joint_dim: cfg.joint_dim,
                text_hidden_dim: cfg.text_hidden_dim,
                n_special: N_SPECIAL,
                content_len: cfg.context_len + 1,
            },
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn cell(&self) -> usize {
        self.image_size / self.grid
    }

    fn patch_dim(&self) -> usize {
        self.cell() * self.cell() * CHANNELS
    }

    /// `grid² × patch_dim`, patches in raster order, pixels `(y, x, c)` within.
    fn patches(&self, image: &Image) -> Tensor {
        let cell = self.cell();
        let px = image.as_slice();
        Tensor::from_shape_fn((self.grid * self.grid, self.patch_dim()), |(p, k)| {
            let (gy, gx) = (p / self.grid, p % self.grid);
            let c = k % CHANNELS;
            let (y, x) = ((k / CHANNELS) / cell, (k / CHANNELS) % cell);
            px[image.index(gy * cell + y, gx * cell + x, c)]
        })
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let want = self.image_dims();
        if image.dims() != want {
            return Err(Error::shape(
                "toy encode_image",
                format!("{want:?}"),
                format!("{:?}", image.dims()),
            ));
        }
        Ok(())
    }

    fn patch_target(&self) -> AdapterTarget {
        AdapterTarget {
            name: "vision.patch".into(),
            weight: PATCH_W.into(),
            in_dim: self.patch_dim(),
            out_dim: self.dims.visual_dim,
        }
    }

    fn proj_target(&self) -> AdapterTarget {
        AdapterTarget {
            name: "vision.proj".into(),
            weight: PROJ_W.into(),
            in_dim: self.dims.visual_dim,
            out_dim: self.dims.joint_dim,
        }
    }
}

impl DualEncoder for ToyBackend {
    fn dims(&self) -> EncoderDims {
        self.dims
    }

    fn image_dims(&self) -> (usize, usize, usize) {
        (self.image_size, self.image_size, CHANNELS)
    }

    fn init_base(&self, store: &mut ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let d = self.dims;
        let patch = self.patch_dim();
        let inv_sqrt = |n: usize| 1.0 / (n as f64).sqrt();
        store.insert(PATCH_W, normal(&mut rng, patch, d.visual_dim, inv_sqrt(patch)));
        store.insert(PATCH_B, normal(&mut rng, 1, d.visual_dim, 0.1));
        store.insert(PROJ_W, normal(&mut rng, d.visual_dim, d.joint_dim, inv_sqrt(d.visual_dim)));
        store.insert(PROJ_B, normal(&mut rng, 1, d.joint_dim, 0.1));
        store.insert(
            TOKEN_W,
            normal(&mut rng, d.text_hidden_dim, d.text_hidden_dim, inv_sqrt(d.text_hidden_dim)),
        );
        store.insert(
            TEXT_PROJ_W,
            normal(&mut rng, d.text_hidden_dim, d.joint_dim, inv_sqrt(d.text_hidden_dim)),
        );
        store.insert(TEXT_PROJ_B, normal(&mut rng, 1, d.joint_dim, 0.1));
        store.insert(SPECIAL, normal(&mut rng, N_SPECIAL, d.text_hidden_dim, 0.02));
    }

    fn adapter_targets(&self) -> Vec<AdapterTarget> {
        vec![self.patch_target(), self.proj_target()]
    }

    fn encode_images(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        images: &[&Image],
    ) -> Result<VisionVars> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("encode_images: empty batch".into()));
        }
        // the embedding is linear, so the mean of embedded patches is the
        // embedding of the mean patch
        let mut x = Array2::zeros((images.len(), self.patch_dim()));
        for (i, img) in images.iter().enumerate() {
            self.check_image(img)?;
            x.row_mut(i)
                .assign(&self.patches(img).mean_axis(Axis(0)).expect("grid > 0"));
        }
        let x = g.constant(x);
        let pooled = adapted_linear(g, store, &self.patch_target(), PATCH_B, x);
        let joint = adapted_linear(g, store, &self.proj_target(), PROJ_B, pooled);
        Ok(VisionVars { pooled, joint })
    }

    fn wrap_prompt(&self, g: &mut Graph, store: &ParamStore, content: Var) -> Result<Var> {
        let d = self.dims;
        let (rows, cols) = g.shape(content);
        if rows != d.content_len || cols != d.text_hidden_dim {
            return Err(Error::shape(
                "wrap_prompt content",
                format!("{}×{}", d.content_len, d.text_hidden_dim),
                format!("{rows}×{cols}"),
            ));
        }
        let special = g.param(store, SPECIAL);
        let start = g.slice_rows(special, 0, 1);
        let end = g.slice_rows(special, 1, 1);
        Ok(g.concat_rows(&[start, content, end]))
    }

    fn encode_prompt(&self, g: &mut Graph, store: &ParamStore, tokens: Var) -> Result<TextVars> {
        let d = self.dims;
        let (rows, cols) = g.shape(tokens);
        if rows != d.prompt_len() || cols != d.text_hidden_dim {
            return Err(Error::shape(
                "encode_prompt tokens",
                format!("{}×{}", d.prompt_len(), d.text_hidden_dim),
                format!("{rows}×{cols}"),
            ));
        }
        let tw = g.param(store, TOKEN_W);
        let out_tokens = g.matmul(tokens, tw);
        let mean = g.mean_rows(tokens);
        let pw = g.param(store, TEXT_PROJ_W);
        let pb = g.param(store, TEXT_PROJ_B);
        let proj = g.matmul(mean, pw);
        let pooled = g.add_row(proj, pb);
        Ok(TextVars {
            tokens: out_tokens,
            pooled,
        })
    }

    fn spatial_tokens(&self, store: &ParamStore, image: &Image) -> Result<Option<SpatialTokens>> {
        self.check_image(image)?;
        let w = store
            .get(PATCH_W)
            .ok_or_else(|| Error::InvalidArgument(format!("missing `{PATCH_W}`")))?;
        let target = self.patch_target();
        let p = self.patches(image);
        let mut tokens = p.dot(w);
        if let (Some(d), Some(u)) = (store.get(&target.down_name()), store.get(&target.up_name())) {
            tokens += &p.dot(&d.t()).dot(&u.t());
        }
        tokens /= (self.grid * self.grid) as f64;
        Ok(Some(SpatialTokens {
            grid: self.grid,
            tokens,
        }))
    }
}
