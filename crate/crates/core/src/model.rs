//! The assembled detector: frozen dual encoder, two prompt streams, two
//! alignment blocks, the text projection `σ` and a linear classifier head.

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{
    self, align_prefix, concat_fuse, cross_attend_batch, init_concat_fusion, init_sigma,
    project_text, AlignBlock,
};
use crate::autograd::{Graph, Tensor, Var};
use crate::backend::{inject_adapters, DualEncoder, ToyBackend, VisionVars, ADAPTER_PREFIX, BASE_PREFIX};
use crate::config::{Config, Fusion};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::losses::{self, TermVars, HEAD_B, HEAD_W};
use crate::params::ParamStore;
use crate::prompts::{encode_stream, PromptState, Stream};

/// Seed of the toy backbone's frozen weights, fixed across training runs.
pub const TOY_BACKEND_SEED: u64 = 7;

/// Graph outputs of one prompt stream for a batch.
#[derive(Clone, Copy, Debug)]
pub struct StreamVars {
    /// `N × joint_dim` pooled prompt embeddings.
    pub text_pooled: Var,
    /// `N × joint_dim` aligned visual features, when computed.
    pub aligned: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub vision: VisionVars,
    pub a: Option<StreamVars>,
    pub b: Option<StreamVars>,
}

/// What a forward pass evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass {
    /// Visual features and stream-B prompt embeddings only.
    Pretrain,
    /// Everything.
    Full,
    /// Stream A through the alignment block; stream B is never touched.
    Inference,
}

/// Per-sample feature matrices used for export and probing.
#[derive(Clone, Debug)]
pub struct Features {
    pub backbone: Tensor,
    pub specific: Tensor,
    pub irrelevant: Tensor,
}

pub struct Sepl {
    pub config: Config,
    pub backend: Box<dyn DualEncoder>,
    pub store: ParamStore,
}

impl std::fmt::Debug for Sepl {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sepl")
            .field("config", &self.config)
            .field("params", &self.store.len())
            .finish()
    }
}

impl Sepl {
    /// Toy backbone plus freshly initialized learnable parts, seeded by `config.train.seed`.
    pub fn new(config: Config) -> Result<Self> {
        let backend = ToyBackend::new(&config.model, TOY_BACKEND_SEED)?;
        Self::with_backend(config, Box::new(backend))
    }

    pub fn with_backend(config: Config, backend: Box<dyn DualEncoder>) -> Result<Self> {
        config.validate()?;
        let m = &config.model;
        let d = backend.dims();
        if (d.visual_dim, d.joint_dim, d.text_hidden_dim) != (m.visual_dim, m.joint_dim, m.text_hidden_dim)
            || d.content_len != m.context_len + 1
        {
            return Err(Error::InvalidArgument(format!(
                "backend dims {d:?} do not match model config"
            )));
        }
        let mut store = ParamStore::new();
        backend.init_base(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        for s in Stream::BOTH {
            PromptState::init(m, &mut rng).store(s, &mut store);
        }
        for s in Stream::BOTH {
            match m.fusion {
                Fusion::Attention => AlignBlock::init(m, &mut rng).store(s, &mut store),
                Fusion::Concat => init_concat_fusion(m, s, &mut store, &mut rng),
            }
        }
        init_sigma(m, &mut store);
        let head = losses::ClassifierHead::zeros(m.joint_dim);
        store.insert(HEAD_W, head.weight);
        store.insert(HEAD_B, head.bias);
        inject_adapters(backend.as_ref(), &mut store, m.adapter_rank, m.adapter, &mut rng)?;
        Ok(Self {
            config,
            backend,
            store,
        })
    }

    /// Rebuild from a configuration and a full parameter store (e.g. a checkpoint).
    pub fn from_store(config: Config, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let backend = ToyBackend::new(&config.model, TOY_BACKEND_SEED)?;
        let mut probe = ParamStore::new();
        backend.init_base(&mut probe);
        for (name, t) in probe.iter() {
            match store.get(name) {
                Some(have) if have.dim() == t.dim() => {}
                Some(have) => {
                    return Err(Error::Checkpoint(format!(
                        "`{name}` has shape {:?}, config expects {:?}",
                        have.dim(),
                        t.dim()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing `{name}`"))),
            }
        }
        Ok(Self {
            config,
            backend: Box::new(backend),
            store,
        })
    }

    pub fn backend(&self) -> &dyn DualEncoder {
        self.backend.as_ref()
    }

    fn heads(&self) -> usize {
        self.config.model.attn_heads
    }

    fn stream(
        &self,
        g: &mut Graph,
        vision: VisionVars,
        stream: Stream,
        align: bool,
    ) -> Result<StreamVars> {
        let texts = encode_stream(g, self.backend(), &self.store, stream, vision.pooled)?;
        let pooled_rows: Vec<Var> = texts.iter().map(|t| t.pooled).collect();
        let text_pooled = g.concat_rows(&pooled_rows);
        let aligned = if align {
            Some(match self.config.model.fusion {
                Fusion::Attention => {
                    let tokens: Vec<Var> = texts.iter().map(|t| t.tokens).collect();
                    cross_attend_batch(g, &self.store, stream, self.heads(), vision.joint, &tokens)?
                }
                Fusion::Concat => concat_fuse(g, &self.store, stream, vision.joint, text_pooled)?,
            })
        } else {
            None
        };
        Ok(StreamVars {
            text_pooled,
            aligned,
        })
    }

    pub fn forward(&self, g: &mut Graph, images: &[&Image], pass: Pass) -> Result<ForwardVars> {
        let vision = self.backend.encode_images(g, &self.store, images)?;
        let (a, b) = match pass {
            Pass::Pretrain => (None, Some(self.stream(g, vision, Stream::B, false)?)),
            Pass::Full => (
                Some(self.stream(g, vision, Stream::A, true)?),
                Some(self.stream(g, vision, Stream::B, true)?),
            ),
            Pass::Inference => (Some(self.stream(g, vision, Stream::A, true)?), None),
        };
        Ok(ForwardVars { vision, a, b })
    }

    /// First-stage objective on a batch.
    pub fn pretrain_loss(&self, g: &mut Graph, images: &[&Image]) -> Result<Var> {
        let fw = self.forward(g, images, Pass::Pretrain)?;
        let tb = fw.b.expect("pretrain pass computes stream B").text_pooled;
        losses::pre(g, fw.vision.joint, tb, self.config.loss.temperature)
    }

    /// Raw second-stage terms on a batch.
    pub fn stage2_terms(&self, g: &mut Graph, images: &[&Image], labels: &[u8]) -> Result<TermVars> {
        let fw = self.forward(g, images, Pass::Full)?;
        let a = fw.a.expect("full pass computes stream A");
        let b = fw.b.expect("full pass computes stream B");
        let fa = a.aligned.expect("aligned A");
        let fb = b.aligned.expect("aligned B");
        let w = g.param(&self.store, HEAD_W);
        let bias = g.param(&self.store, HEAD_B);
        let cls = losses::cls(g, fa, w, bias, labels)?;
        let dis = losses::dis(g, fa, fb)?;
        let div = losses::div(g, a.text_pooled, b.text_pooled)?;
        let ta = project_text(g, &self.store, a.text_pooled)?;
        let tb = project_text(g, &self.store, b.text_pooled)?;
        let al = losses::align(g, fa, fb, ta, tb, labels, 1.0, 1.0)?;
        let con = losses::con(g, fw.vision.joint, labels, self.config.loss.temperature)?;
        Ok(TermVars {
            cls,
            dis,
            div,
            align_specific: al.specific,
            align_irrelevant: al.irrelevant,
            con,
        })
    }

    /// `N × 2` logits from the forgery-specific stream.
    pub fn logits(&self, g: &mut Graph, images: &[&Image]) -> Result<Var> {
        let fw = self.forward(g, images, Pass::Inference)?;
        let fa = fw.a.and_then(|a| a.aligned).expect("inference computes f_A");
        let w = g.param(&self.store, HEAD_W);
        let b = g.param(&self.store, HEAD_B);
        losses::head_logits(g, fa, w, b)
    }

    /// Probability of the fake class for each image.
    pub fn predict_batch(&self, images: &[&Image]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let logits = self.logits(&mut g, images)?;
        let p = g.softmax_rows(logits);
        Ok(g.value(p).column(1).to_vec())
    }

    pub fn predict(&self, image: &Image) -> Result<f64> {
        Ok(self.predict_batch(&[image])?[0])
    }

    /// Scores for many images, evaluated in chunks.
    pub fn score_all(&self, images: &[Image], chunk: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for c in images.chunks(chunk.max(1)) {
            let refs: Vec<&Image> = c.iter().collect();
            out.extend(self.predict_batch(&refs)?);
        }
        Ok(out)
    }

    /// Backbone, forgery-specific and forgery-irrelevant features of each image.
    pub fn features(&self, images: &[Image], chunk: usize) -> Result<Features> {
        let mut parts: [Vec<Tensor>; 3] = Default::default();
        for c in images.chunks(chunk.max(1)) {
            let refs: Vec<&Image> = c.iter().collect();
            let mut g = Graph::new();
            let fw = self.forward(&mut g, &refs, Pass::Full)?;
            parts[0].push(g.value(fw.vision.joint).clone());
            parts[1].push(g.value(fw.a.and_then(|a| a.aligned).unwrap()).clone());
            parts[2].push(g.value(fw.b.and_then(|b| b.aligned).unwrap()).clone());
        }
        let cat = |v: &[Tensor]| -> Tensor {
            let views: Vec<_> = v.iter().map(|t| t.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("consistent widths")
        };
        Ok(Features {
            backbone: cat(&parts[0]),
            specific: cat(&parts[1]),
            irrelevant: cat(&parts[2]),
        })
    }

    /// Checksum of the frozen encoder weights.
    pub fn base_checksum(&self) -> String {
        self.store.checksum_prefix(BASE_PREFIX)
    }
}

/// Parameter groups by name, for freezing contracts.
pub fn is_base(name: &str) -> bool {
    name.starts_with(BASE_PREFIX)
}

pub fn is_adapter(name: &str) -> bool {
    name.starts_with(ADAPTER_PREFIX)
}

pub fn is_stream_param(name: &str, stream: Stream) -> bool {
    name.starts_with(&stream.prefix())
        || name.starts_with(&align_prefix(stream))
        || name.starts_with(&alignment::fuse_weight(stream))
        || name.starts_with(&alignment::fuse_bias(stream))
}
