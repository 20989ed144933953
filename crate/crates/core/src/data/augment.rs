//! Training-time augmentation: horizontal flip, small rotation, blur and
//! brightness/contrast jitter, each applied independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops;
use super::Image;

/// Probability of applying each augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentProbs {
    pub flip: f64,
    pub rotate: f64,
    pub blur: f64,
    pub color: f64,
}

impl AugmentProbs {
    pub const DEFAULT: Self = Self {
        flip: 0.5,
        rotate: 0.5,
        blur: 0.5,
        color: 0.5,
    };
    pub const OFF: Self = Self {
        flip: 0.0,
        rotate: 0.0,
        blur: 0.0,
        color: 0.0,
    };
    pub const FLIP_ONLY: Self = Self {
        flip: 1.0,
        ..Self::OFF
    };
}

impl Default for AugmentProbs {
    fn default() -> Self {
        Self::DEFAULT
    }
}

pub const MAX_ROTATION_DEG: f64 = 10.0;
pub const BLUR_SIGMA: (f64, f64) = (0.3, 1.0);
pub const BRIGHTNESS: f64 = 0.1;
pub const CONTRAST: (f64, f64) = (0.8, 1.2);

pub fn augment(image: &Image, seed: u64) -> Image {
    augment_with(image, seed, &AugmentProbs::DEFAULT)
}

/// Every random draw happens regardless of which branches fire, so the
/// parameters for a seed do not depend on the probabilities.
pub fn augment_with(image: &Image, seed: u64, probs: &AugmentProbs) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: [f64; 4] = rng.random();
    let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
    let sigma = rng.random_range(BLUR_SIGMA.0..=BLUR_SIGMA.1);
    let bright = rng.random_range(-BRIGHTNESS..=BRIGHTNESS);
    let contrast = rng.random_range(CONTRAST.0..=CONTRAST.1);

    let mut out = image.clone();
    if u[0] < probs.flip {
        out = ops::flip_horizontal(&out);
    }
    if u[1] < probs.rotate {
        out = ops::rotate(&out, angle);
    }
    if u[2] < probs.blur {
        out = ops::gaussian_blur(&out, sigma);
    }
    if u[3] < probs.color {
        out = ops::contrast(&out, contrast).map(|v| v + bright);
    }
    out.clamp01()
}
