//! Gradient-weighted activation maps over the backbone's spatial token grid.
//!
//! The toy backbone's pooled feature is the sum of per-cell token vectors
//! plus a bias. Cell `p` is scored `relu(ḡ · (t_p(x) − t_p(x̃)))`, where `x̃`
//! is a blurred copy of the image and `ḡ` the gradient of the fake-minus-real
//! logit margin with respect to the pooled feature, averaged along the
//! straight path from `x̃` to `x` (integrated gradients). The cell scores
//! then sum to the margin gained over the baseline.
//!
//! A trained detector is usually saturated at its inputs, where the local
//! gradient can point anywhere, hence the path average. The blur keeps the
//! low-frequency content, which a black or constant baseline would not, so
//! the map attributes only what the blur removes. Maps are scaled by their
//! maximum into `[0, 1]`.

use std::collections::BTreeSet;
use std::path::Path;

use image::{ImageBuffer, Rgb};
use ndarray::Array1;

use crate::autograd::{GradPolicy, Graph};
use crate::backend::SpatialTokens;
use crate::data::ops::gaussian_blur;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::losses::{head_logits, HEAD_B, HEAD_W};
use crate::model::{Pass, Sepl};

/// Frozen parameter whose leaf makes the pooled feature differentiable.
const POOLED_HANDLE: &str = "encoder.vision.patch.bias";

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub grid: usize,
    /// Raster order, `grid²` values in `[0, 1]`.
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn at(&self, gy: usize, gx: usize) -> f64 {
        self.values[gy * self.grid + gx]
    }

    /// Value at a pixel of a `size × size` image (nearest cell).
    pub fn at_pixel(&self, y: usize, x: usize, size: usize) -> f64 {
        let cell = size / self.grid;
        self.at((y / cell).min(self.grid - 1), (x / cell).min(self.grid - 1))
    }

    /// Mean over pixels inside and outside `inside`, for a `size × size` image.
    pub fn mean_inside_outside(&self, size: usize, inside: impl Fn(usize, usize) -> bool) -> (f64, f64) {
        let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
        for y in 0..size {
            for x in 0..size {
                let v = self.at_pixel(y, x, size);
                if inside(y, x) {
                    si += v;
                    ni += 1;
                } else {
                    so += v;
                    no += 1;
                }
            }
        }
        (si / ni.max(1) as f64, so / no.max(1) as f64)
    }
}

/// Midpoint-rule steps of the path integral.
pub const PATH_STEPS: usize = 16;

/// Gaussian blur of the baseline image, in pixels.
pub const BASELINE_BLUR_SIGMA: f64 = 1.0;

/// Gradient of the logit margin with respect to the pooled backbone feature.
fn pooled_gradient(model: &Sepl, image: &Image) -> Result<Array1<f64>> {
    let policy = GradPolicy::Only(BTreeSet::from([POOLED_HANDLE.to_string()]));
    let mut g = Graph::with_policy(policy);
    let fw = model.forward(&mut g, &[image], Pass::Inference)?;
    let fa = fw.a.and_then(|a| a.aligned).expect("inference computes f_A");
    let w = g.param(&model.store, HEAD_W);
    let b = g.param(&model.store, HEAD_B);
    let logits = head_logits(&mut g, fa, w, b)?;
    let fake = g.slice_cols(logits, 1, 1);
    let real = g.slice_cols(logits, 0, 1);
    let margin = g.sub(fake, real);
    let margin = g.sum(margin);
    let grads = g.backward(margin);
    Ok(grads
        .get_or_zeros(fw.vision.pooled, g.value(fw.vision.pooled))
        .row(0)
        .to_owned())
}

pub fn saliency(model: &Sepl, image: &Image) -> Result<SaliencyMap> {
    let baseline = gaussian_blur(image, BASELINE_BLUR_SIGMA);
    let tokens = |img: &Image| -> Result<SpatialTokens> {
        model
            .backend()
            .spatial_tokens(&model.store, img)?
            .ok_or_else(|| Error::InvalidArgument("backend exposes no spatial feature map".into()))
    };
    let here = tokens(image)?;
    let delta = &here.tokens - &tokens(&baseline)?.tokens;
    let mut weight = Array1::<f64>::zeros(delta.ncols());
    for k in 0..PATH_STEPS {
        let alpha = (k as f64 + 0.5) / PATH_STEPS as f64;
        let data = baseline
            .as_slice()
            .iter()
            .zip(image.as_slice())
            .map(|(b, x)| b + alpha * (x - b))
            .collect();
        let point = Image::new(image.height(), image.width(), image.channels(), data)?;
        weight += &pooled_gradient(model, &point)?;
    }
    weight /= PATH_STEPS as f64;
    let raw: Vec<f64> = delta
        .rows()
        .into_iter()
        .map(|t| t.dot(&weight).max(0.0))
        .collect();
    let peak = raw.iter().cloned().fold(0.0, f64::max);
    let values = if peak > 0.0 {
        raw.iter().map(|v| v / peak).collect()
    } else {
        vec![0.0; raw.len()]
    };
    Ok(SaliencyMap {
        grid: here.grid,
        values,
    })
}

/// Red heat blended over the grayscale image, upscaled by `scale`.
pub fn write_overlay_png(image: &Image, map: &SaliencyMap, scale: u32, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (image.height(), image.width());
    let scale = scale.max(1);
    let buf = ImageBuffer::from_fn(w as u32 * scale, h as u32 * scale, |px, py| {
        let (x, y) = ((px / scale) as usize, (py / scale) as usize);
        let gray = crate::data::ops::luma(image, y, x).clamp(0.0, 1.0);
        let heat = map.at_pixel(y, x, h.min(w));
        let mix = |base: f64, tint: f64| ((0.5 * base + 0.5 * tint) * 255.0).round() as u8;
        Rgb([mix(gray, heat), mix(gray, 0.0), mix(gray, 1.0 - heat)])
    });
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Saliency grid as CSV: `gy,gx,value`.
pub fn write_map_csv(map: &SaliencyMap, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["gy", "gx", "value"])?;
    for gy in 0..map.grid {
        for gx in 0..map.grid {
            w.write_record([gy.to_string(), gx.to_string(), format!("{:.17e}", map.at(gy, gx))])?;
        }
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}
