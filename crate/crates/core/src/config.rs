//! Typed run configuration.
//!
//! The on-disk form is a flat TOML document: every key lives at the top level
//! and every key is optional. Absent keys take the defaults listed in
//! [`ModelConfig::default`], [`LossWeights::default`] and
//! [`TrainConfig::default`]. Unknown keys are rejected.
//!
//! ```toml
//! context_len = 16
//! lambda1 = 0.05
//! batch_size = 24
//! fusion = "attention"
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How the visual feature is fused with a prompt stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Single-query cross-attention over the prompt token sequence.
    Attention,
    /// Concatenate the visual feature with the pooled prompt embedding and project.
    Concat,
}

/// Initialization family of the low-rank adapters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    /// Seeded small random down-projection, zero up-projection.
    Standard,
    /// Down-projection spans the top right-singular vectors of the frozen weight.
    Svd,
}

impl FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Fusion::Attention),
            "concat" => Ok(Fusion::Concat),
            other => Err(Error::InvalidArgument(format!(
                "unknown fusion `{other}` (expected attention|concat)"
            ))),
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Attention => "attention",
            Fusion::Concat => "concat",
        })
    }
}

impl FromStr for AdapterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(AdapterKind::Standard),
            "svd" => Ok(AdapterKind::Svd),
            other => Err(Error::InvalidArgument(format!(
                "unknown adapter `{other}` (expected standard|svd)"
            ))),
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdapterKind::Standard => "standard",
            AdapterKind::Svd => "svd",
        })
    }
}

/// Architecture of the encoder backend, prompts and alignment blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Width of the backbone's pooled visual feature (meta-network input).
    pub visual_dim: usize,
    /// Width of the shared image/text embedding space.
    pub joint_dim: usize,
    /// Token width of the text encoder.
    pub text_hidden_dim: usize,
    /// Number of learnable global context vectors per prompt.
    pub context_len: usize,
    pub meta_hidden: usize,
    /// Low-rank adapter rank; 0 disables adapters.
    pub adapter_rank: usize,
    pub adapter: AdapterKind,
    pub attn_heads: usize,
    pub fusion: Fusion,
    /// Square input side length accepted by the toy backend.
    pub image_size: usize,
    /// Side of the toy backend's spatial token grid.
    pub grid: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            visual_dim: 64,
            joint_dim: 32,
            text_hidden_dim: 48,
            context_len: 16,
            meta_hidden: 256,
            adapter_rank: 8,
            adapter: AdapterKind::Standard,
            attn_heads: 1,
            fusion: Fusion::Attention,
            image_size: 32,
            grid: 4,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("visual_dim", self.visual_dim),
            ("joint_dim", self.joint_dim),
            ("text_hidden_dim", self.text_hidden_dim),
            ("context_len", self.context_len),
            ("meta_hidden", self.meta_hidden),
            ("attn_heads", self.attn_heads),
            ("image_size", self.image_size),
            ("grid", self.grid),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(invalid(key, "must be > 0"));
            }
        }
        if !self.joint_dim.is_multiple_of(self.attn_heads) {
            return Err(invalid("attn_heads", "must divide joint_dim"));
        }
        if !self.image_size.is_multiple_of(self.grid) {
            return Err(invalid("grid", "must divide image_size"));
        }
        if self.num_classes != 2 {
            return Err(invalid("num_classes", "must be 2"));
        }
        Ok(())
    }
}

/// Auxiliary loss weights, their warm-up and the contrastive temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// Disentanglement weight.
    pub lambda1: f64,
    /// Prompt diversity weight.
    pub lambda2: f64,
    /// Alignment weight for the label-gated forgery-specific terms.
    pub lambda3_specific: f64,
    /// Alignment weight for the forgery-irrelevant term.
    pub lambda3_irrelevant: f64,
    /// Supervised contrastive weight.
    pub lambda4: f64,
    pub warmup_ratio: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.05,
            lambda2: 0.01,
            lambda3_specific: 0.08,
            lambda3_irrelevant: 0.12,
            lambda4: 0.1,
            warmup_ratio: 0.1,
            temperature: 0.07,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3_specific", self.lambda3_specific),
            ("lambda3_irrelevant", self.lambda3_irrelevant),
            ("lambda4", self.lambda4),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(key, "must be a finite value >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(invalid("warmup_ratio", "must lie in [0, 1]"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(invalid("temperature", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Apply training augmentations to each sampled image.
    pub augment: bool,
    /// Skip the prompt pretraining stage.
    pub skip_pretrain: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 24,
            learning_rate: 2e-4,
            weight_decay: 5e-4,
            stage1_steps: 100,
            stage2_steps: 1000,
            seed: 0,
            grad_clip: 1.0,
            augment: true,
            skip_pretrain: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(invalid("batch_size", "batch_size ≥ 2 required"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("learning_rate", "must be > 0"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay", "must be >= 0"));
        }
        if self.stage2_steps == 0 {
            return Err(invalid("stage2_steps", "must be > 0"));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(invalid("grad_clip", "must be >= 0"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", "must fit a signed 64-bit integer"));
        }
        Ok(())
    }
}

fn invalid(key: &str, msg: &str) -> Error {
    Error::ConfigInvalid {
        key: key.to_string(),
        msg: msg.to_string(),
    }
}

/// The full configuration of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
}

const TOY_PRESET: &str = include_str!("../configs/toy.toml");

impl Config {
    /// The preset used by the synthetic watermark experiments.
    pub fn toy() -> Self {
        Self::from_toml_str(TOY_PRESET).expect("bundled toy preset is valid")
    }

    pub fn toy_preset_text() -> &'static str {
        TOY_PRESET
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        let cfg = raw.into_config();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Flat TOML with every key written out.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(&RawConfig::from_config(self)).expect("flat config serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }
}

/// Parse and validate a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<(ModelConfig, LossWeights, TrainConfig)> {
    let c = Config::load(path)?;
    Ok((c.model, c.loss, c.train))
}

/// Linearly ramped loss weight: `base · min(1, step / ceil(warmup_ratio · total_steps))`.
pub fn warmup_weight(base: f64, step: usize, total_steps: usize, warmup_ratio: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("total_steps must be > 0".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} exceeds total_steps {total_steps}"
        )));
    }
    let window = warmup_window(total_steps, warmup_ratio);
    if window == 0 || step >= window {
        return Ok(base);
    }
    Ok(base * (step as f64 / window as f64))
}

/// Number of steps over which auxiliary weights ramp up.
pub fn warmup_window(total_steps: usize, warmup_ratio: f64) -> usize {
    let w = warmup_ratio * total_steps as f64;
    // 0.1 * 300 evaluates to 30.000000000000004
    (w - 1e-9 * w.max(1.0)).ceil().max(0.0) as usize
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    visual_dim: Option<usize>,
    joint_dim: Option<usize>,
    text_hidden_dim: Option<usize>,
    context_len: Option<usize>,
    meta_hidden: Option<usize>,
    adapter_rank: Option<usize>,
    adapter: Option<AdapterKind>,
    attn_heads: Option<usize>,
    fusion: Option<Fusion>,
    image_size: Option<usize>,
    grid: Option<usize>,
    num_classes: Option<usize>,

    lambda1: Option<f64>,
    lambda2: Option<f64>,
    lambda3_specific: Option<f64>,
    lambda3_irrelevant: Option<f64>,
    lambda4: Option<f64>,
    warmup_ratio: Option<f64>,
    temperature: Option<f64>,

    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    stage1_steps: Option<usize>,
    stage2_steps: Option<usize>,
    seed: Option<u64>,
    grad_clip: Option<f64>,
    augment: Option<bool>,
    skip_pretrain: Option<bool>,
}

impl RawConfig {
    fn into_config(self) -> Config {
        let m = ModelConfig::default();
        let l = LossWeights::default();
        let t = TrainConfig::default();
        Config {
            model: ModelConfig {
                visual_dim: self.visual_dim.unwrap_or(m.visual_dim),
                joint_dim: self.joint_dim.unwrap_or(m.joint_dim),
                text_hidden_dim: self.text_hidden_dim.unwrap_or(m.text_hidden_dim),
                context_len: self.context_len.unwrap_or(m.context_len),
                meta_hidden: self.meta_hidden.unwrap_or(m.meta_hidden),
                adapter_rank: self.adapter_rank.unwrap_or(m.adapter_rank),
                adapter: self.adapter.unwrap_or(m.adapter),
                attn_heads: self.attn_heads.unwrap_or(m.attn_heads),
                fusion: self.fusion.unwrap_or(m.fusion),
                image_size: self.image_size.unwrap_or(m.image_size),
                grid: self.grid.unwrap_or(m.grid),
                num_classes: self.num_classes.unwrap_or(m.num_classes),
            },
            loss: LossWeights {
                lambda1: self.lambda1.unwrap_or(l.lambda1),
                lambda2: self.lambda2.unwrap_or(l.lambda2),
                lambda3_specific: self.lambda3_specific.unwrap_or(l.lambda3_specific),
                lambda3_irrelevant: self.lambda3_irrelevant.unwrap_or(l.lambda3_irrelevant),
                lambda4: self.lambda4.unwrap_or(l.lambda4),
                warmup_ratio: self.warmup_ratio.unwrap_or(l.warmup_ratio),
                temperature: self.temperature.unwrap_or(l.temperature),
            },
            train: TrainConfig {
                batch_size: self.batch_size.unwrap_or(t.batch_size),
                learning_rate: self.learning_rate.unwrap_or(t.learning_rate),
                weight_decay: self.weight_decay.unwrap_or(t.weight_decay),
                stage1_steps: self.stage1_steps.unwrap_or(t.stage1_steps),
                stage2_steps: self.stage2_steps.unwrap_or(t.stage2_steps),
                seed: self.seed.unwrap_or(t.seed),
                grad_clip: self.grad_clip.unwrap_or(t.grad_clip),
                augment: self.augment.unwrap_or(t.augment),
                skip_pretrain: self.skip_pretrain.unwrap_or(t.skip_pretrain),
            },
        }
    }

    fn from_config(c: &Config) -> Self {
        let (m, l, t) = (&c.model, &c.loss, &c.train);
        RawConfig {
            visual_dim: Some(m.visual_dim),
            joint_dim: Some(m.joint_dim),
            text_hidden_dim: Some(m.text_hidden_dim),
            context_len: Some(m.context_len),
            meta_hidden: Some(m.meta_hidden),
            adapter_rank: Some(m.adapter_rank),
            adapter: Some(m.adapter),
            attn_heads: Some(m.attn_heads),
            fusion: Some(m.fusion),
            image_size: Some(m.image_size),
            grid: Some(m.grid),
            num_classes: Some(m.num_classes),
            lambda1: Some(l.lambda1),
            lambda2: Some(l.lambda2),
            lambda3_specific: Some(l.lambda3_specific),
            lambda3_irrelevant: Some(l.lambda3_irrelevant),
            lambda4: Some(l.lambda4),
            warmup_ratio: Some(l.warmup_ratio),
            temperature: Some(l.temperature),
            batch_size: Some(t.batch_size),
            learning_rate: Some(t.learning_rate),
            weight_decay: Some(t.weight_decay),
            stage1_steps: Some(t.stage1_steps),
            stage2_steps: Some(t.stage2_steps),
            seed: Some(t.seed),
            grad_clip: Some(t.grad_clip),
            augment: Some(t.augment),
            skip_pretrain: Some(t.skip_pretrain),
        }
    }
}
