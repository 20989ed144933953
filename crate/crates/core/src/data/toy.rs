//! Synthetic forgery dataset.
//!
//! Every video has its own smooth sinusoidal base pattern; its frames differ
//! by a small phase drift and pixel noise. Fake videos add a low-amplitude
//! pixel checkerboard inside one cell of a coarse grid, at a location fixed
//! per video. Pixels are quantized to 8 bits so that images written to PNG
//! and read back are identical to the in-memory ones.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, Sample, Split};
use super::Image;
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const REAL_METHOD: &str = "real";
pub const FAKE_METHOD: &str = "toy_checker";

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y..self.y + self.height).contains(&y) && (self.x..self.x + self.width).contains(&x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyParams {
    pub image_size: usize,
    /// Side of a watermark cell; `image_size` must be a multiple of it.
    pub cell: usize,
    pub amplitude: f64,
    /// Range of the per-channel mean intensity of a video.
    pub offset_range: (f64, f64),
    /// Range of each sinusoid's amplitude in the base pattern.
    pub wave_amplitude: (f64, f64),
    pub frame_noise: f64,
    /// Draw the checkerboard's sign per fake video; otherwise every fake
    /// carries the same pattern.
    pub random_phase: bool,
    /// Fractions of each class's videos assigned to val and test.
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            image_size: 32,
            cell: 16,
            amplitude: 0.1,
            offset_range: (0.35, 0.65),
            wave_amplitude: (0.02, 0.08),
            frame_noise: 0.01,
            random_phase: true,
            val_fraction: 0.1,
            test_fraction: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub samples: Vec<Sample>,
    pub images: Vec<Image>,
    /// Watermark location per sample (`None` for real frames).
    pub watermarks: Vec<Option<Rect>>,
}

impl ToyDataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    pub fn images_of(&self, idx: &[usize]) -> Vec<Image> {
        idx.iter().map(|&i| self.images[i].clone()).collect()
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.samples[i].label).collect()
    }

    /// Write `images/*.png` and the manifest under `dir`; returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
        for (s, img) in self.samples.iter().zip(&self.images) {
            img.save_png(dir.join(&s.path))?;
        }
        let path = dir.join(MANIFEST_NAME);
        write_manifest(&path, &self.samples)?;
        Ok(path)
    }
}

pub fn make_toy_dataset(n_videos: usize, frames_per_video: usize, seed: u64) -> Result<ToyDataset> {
    make_toy_dataset_with(n_videos, frames_per_video, seed, &ToyParams::default())
}

struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: f64,
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Per class, shuffle video slots and assign test, then val, then train.
fn assign_splits(n_per_class: usize, p: &ToyParams, rng: &mut ChaCha8Rng) -> Vec<Split> {
    let n_test = ((n_per_class as f64 * p.test_fraction).round() as usize).clamp(1, n_per_class - 1);
    let n_val = ((n_per_class as f64 * p.val_fraction).round() as usize).min(n_per_class - 1 - n_test);
    let mut splits: Vec<Split> = (0..n_per_class)
        .map(|i| {
            if i < n_test {
                Split::Test
            } else if i < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            }
        })
        .collect();
    splits.shuffle(rng);
    splits
}

pub fn make_toy_dataset_with(
    n_videos: usize,
    frames_per_video: usize,
    seed: u64,
    p: &ToyParams,
) -> Result<ToyDataset> {
    if n_videos < 4 {
        return Err(Error::InvalidArgument(format!("n_videos must be at least 4, got {n_videos}")));
    }
    if !n_videos.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "n_videos must be even (half real, half fake), got {n_videos}"
        )));
    }
    if frames_per_video == 0 {
        return Err(Error::InvalidArgument("frames_per_video must be positive".into()));
    }
    if p.cell == 0 || !p.image_size.is_multiple_of(p.cell) {
        return Err(Error::InvalidArgument(format!(
            "image_size {} is not a multiple of cell {}",
            p.image_size, p.cell
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n_videos / 2;
    let real_splits = assign_splits(half, p, &mut rng);
    let fake_splits = assign_splits(half, p, &mut rng);
    let cells = p.image_size / p.cell;
    let noise = Normal::new(0.0, p.frame_noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let size = p.image_size;

    let mut out = ToyDataset {
        samples: Vec::new(),
        images: Vec::new(),
        watermarks: Vec::new(),
    };
    for v in 0..n_videos {
        // alternate labels so both classes span the whole id range
        let fake = v % 2 == 1;
        let split = if fake { fake_splits[v / 2] } else { real_splits[v / 2] };
        let video_id = format!("v{v:04}");
        let offsets: [f64; 3] = std::array::from_fn(|_| rng.random_range(p.offset_range.0..p.offset_range.1));
        let waves: Vec<[Wave; 3]> = (0..3)
            .map(|_| {
                std::array::from_fn(|_| Wave {
                    fy: rng.random_range(0.05..0.4),
                    fx: rng.random_range(0.05..0.4),
                    phase: rng.random_range(0.0..TAU),
                    amp: rng.random_range(p.wave_amplitude.0..p.wave_amplitude.1),
                })
            })
            .collect();
        let mark = fake.then(|| {
            let (cy, cx) = (rng.random_range(0..cells), rng.random_range(0..cells));
            Rect {
                y: cy * p.cell,
                x: cx * p.cell,
                height: p.cell,
                width: p.cell,
            }
        });
        let phase = if fake && p.random_phase && rng.random_bool(0.5) { 1 } else { 0 };
        for f in 0..frames_per_video {
            let drift = rng.random_range(-0.3..0.3);
            let mut img = Image::from_fn(size, size, 3, |y, x, c| {
                let base: f64 = waves[c]
                    .iter()
                    .map(|w| w.amp * (w.fy * y as f64 + w.fx * x as f64 + w.phase + drift).sin())
                    .sum();
                offsets[c] + base
            });
            for val in img.as_mut_slice() {
                *val += noise.sample(&mut rng);
            }
            if let Some(r) = mark {
                for y in r.y..r.y + r.height {
                    for x in r.x..r.x + r.width {
                        let s = if (x + y + phase) % 2 == 0 { p.amplitude } else { -p.amplitude };
                        for c in 0..3 {
                            img.set(y, x, c, img.get(y, x, c) + s);
                        }
                    }
                }
            }
            let img = img.map(quantize);
            out.samples.push(Sample {
                path: PathBuf::from(format!("images/{video_id}_f{f:02}.png")),
                label: fake as u8,
                video_id: video_id.clone(),
                method: if fake { FAKE_METHOD } else { REAL_METHOD }.to_string(),
                split,
            });
            out.images.push(img);
            out.watermarks.push(mark);
        }
    }
    Ok(out)
}
