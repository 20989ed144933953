//! Six perturbation families at five severity levels, for robustness sweeps.
//!
//! Parameters come from a [`SeverityTable`]; the built-in table is the
//! committed `data/severity.toml`. Severity 0 returns the input unchanged and
//! serves as the clean control.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ops;
use super::Image;
use crate::error::{Error, Result};

pub const MAX_SEVERITY: u8 = 5;

const BUILTIN_TABLE: &str = include_str!("../../data/severity.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    BlockWise,
    ColorSaturation,
    ColorContrast,
    GaussianNoise,
    GaussianBlur,
    JpegCompression,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::BlockWise,
        Family::ColorSaturation,
        Family::ColorContrast,
        Family::GaussianNoise,
        Family::GaussianBlur,
        Family::JpegCompression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::BlockWise => "block_wise",
            Family::ColorSaturation => "color_saturation",
            Family::ColorContrast => "color_contrast",
            Family::GaussianNoise => "gaussian_noise",
            Family::GaussianBlur => "gaussian_blur",
            Family::JpegCompression => "jpeg_compression",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Family::ALL.iter().map(|f| f.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown perturbation family `{s}` (known: {})",
                    known.join(", ")
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub family: Family,
    pub severity: u8,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(family: Family, severity: u8, seed: u64) -> Self {
        Self {
            family,
            severity,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeverityTable {
    pub version: u32,
    pub block_wise: BlockWise,
    pub color_saturation: Factors,
    pub color_contrast: Factors,
    pub gaussian_noise: Sigmas,
    pub gaussian_blur: Sigmas,
    pub jpeg_compression: Qualities,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockWise {
    pub block_size: usize,
    pub fraction: [f64; 5],
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factors {
    pub factor: [f64; 5],
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sigmas {
    pub sigma: [f64; 5],
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Qualities {
    pub quality: [u8; 5],
}

fn monotone(xs: &[f64], increasing: bool) -> bool {
    xs.windows(2)
        .all(|w| if increasing { w[1] >= w[0] } else { w[1] <= w[0] })
}

impl SeverityTable {
    pub fn builtin() -> &'static SeverityTable {
        static TABLE: OnceLock<SeverityTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            SeverityTable::from_toml_str(BUILTIN_TABLE).expect("committed severity table is valid")
        })
    }

    pub fn builtin_text() -> &'static str {
        BUILTIN_TABLE
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let t: SeverityTable = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::ConfigInvalid {
                key: key.into(),
                msg: msg.into(),
            })
        };
        let b = &self.block_wise;
        if b.block_size == 0 {
            return bad("block_wise.block_size", "must be positive");
        }
        if !monotone(&b.fraction, true) || b.fraction.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("block_wise.fraction", "must be non-decreasing within [0, 1]");
        }
        for (key, f) in [
            ("color_saturation.factor", &self.color_saturation.factor),
            ("color_contrast.factor", &self.color_contrast.factor),
        ] {
            if !monotone(f, false) || f.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad(key, "must be non-increasing within [0, 1]");
            }
        }
        for (key, s) in [
            ("gaussian_noise.sigma", &self.gaussian_noise.sigma),
            ("gaussian_blur.sigma", &self.gaussian_blur.sigma),
        ] {
            if !monotone(s, true) || s.iter().any(|v| *v < 0.0) {
                return bad(key, "must be non-decreasing and non-negative");
            }
        }
        let q: Vec<f64> = self.jpeg_compression.quality.iter().map(|&q| q as f64).collect();
        if !monotone(&q, false) || self.jpeg_compression.quality.iter().any(|&q| q == 0 || q > 100) {
            return bad("jpeg_compression.quality", "must be non-increasing within 1..=100");
        }
        Ok(())
    }

    /// The scalar parameter for `(family, severity)`; severity must be 1..=5.
    pub fn level(&self, family: Family, severity: u8) -> f64 {
        let i = severity as usize - 1;
        match family {
            Family::BlockWise => self.block_wise.fraction[i],
            Family::ColorSaturation => self.color_saturation.factor[i],
            Family::ColorContrast => self.color_contrast.factor[i],
            Family::GaussianNoise => self.gaussian_noise.sigma[i],
            Family::GaussianBlur => self.gaussian_blur.sigma[i],
            Family::JpegCompression => self.jpeg_compression.quality[i] as f64,
        }
    }
}

/// Perturb with the built-in table.
pub fn perturb(image: &Image, spec: &PerturbationSpec) -> Result<Image> {
    perturb_with(image, spec, SeverityTable::builtin())
}

pub fn perturb_with(image: &Image, spec: &PerturbationSpec, table: &SeverityTable) -> Result<Image> {
    if spec.severity > MAX_SEVERITY {
        return Err(Error::InvalidArgument(format!(
            "severity {} out of range 0..={MAX_SEVERITY}",
            spec.severity
        )));
    }
    if spec.severity == 0 {
        return Ok(image.clone());
    }
    let p = table.level(spec.family, spec.severity);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(match spec.family {
        Family::BlockWise => block_mask(image, table.block_wise.block_size, p, &mut rng),
        Family::ColorSaturation => ops::saturate(image, p),
        Family::ColorContrast => ops::contrast(image, p),
        Family::GaussianNoise => {
            let mut out = image.clone();
            for v in out.as_mut_slice() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = (*v + p * z).clamp(0.0, 1.0);
            }
            out
        }
        Family::GaussianBlur => ops::gaussian_blur(image, p).clamp01(),
        Family::JpegCompression => ops::jpeg_roundtrip(image, p as u8)?,
    })
}

/// Number of blocks masked for a grid of `n_blocks` at `fraction`.
pub fn masked_blocks(n_blocks: usize, fraction: f64) -> usize {
    ((n_blocks as f64 * fraction).round() as usize).min(n_blocks)
}

/// Zero a seeded subset of `block × block` tiles. The tile order depends only
/// on the seed, so higher fractions mask a superset of lower ones.
fn block_mask(image: &Image, block: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Image {
    let (h, w, c) = image.dims();
    let (by, bx) = (h.div_ceil(block), w.div_ceil(block));
    let mut order: Vec<usize> = (0..by * bx).collect();
    order.shuffle(rng);
    let mut out = image.clone();
    for &b in &order[..masked_blocks(order.len(), fraction)] {
        let (y0, x0) = ((b / bx) * block, (b % bx) * block);
        for y in y0..(y0 + block).min(h) {
            for x in x0..(x0 + block).min(w) {
                for ch in 0..c {
                    out.set(y, x, ch, 0.0);
                }
            }
        }
    }
    out
}
