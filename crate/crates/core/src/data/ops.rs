//! Pixel operations shared by augmentation and perturbation.

use image::codecs::jpeg::{JpegDecoder, JpegEncoder};
use image::{DynamicImage, ImageDecoder};

use super::Image;
use crate::error::{Error, Result};

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamped borders. `sigma ≤ 0` is the identity.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w, c) = img.dims();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let horiz = Image::from_fn(h, w, c, |y, x, ch| {
        k.iter()
            .enumerate()
            .map(|(j, kv)| kv * img.get(y, clampi(x as isize + j as isize - r, w), ch))
            .sum()
    });
    Image::from_fn(h, w, c, |y, x, ch| {
        k.iter()
            .enumerate()
            .map(|(j, kv)| kv * horiz.get(clampi(y as isize + j as isize - r, h), x, ch))
            .sum()
    })
}

fn bilinear(img: &Image, y: f64, x: f64, ch: usize) -> f64 {
    let (h, w, _) = img.dims();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (dy, dx) = (y - y0 as f64, x - x0 as f64);
    let top = img.get(y0, x0, ch) * (1.0 - dx) + img.get(y0, x1, ch) * dx;
    let bot = img.get(y1, x0, ch) * (1.0 - dx) + img.get(y1, x1, ch) * dx;
    top * (1.0 - dy) + bot * dy
}

/// Rotation about the image centre by `degrees`, bilinear, edge-clamped.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    let (h, w, c) = img.dims();
    let (s, co) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    Image::from_fn(h, w, c, |y, x, ch| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        // inverse map: output pixel samples the source rotated by -θ
        let sx = co * dx + s * dy + cx;
        let sy = -s * dx + co * dy + cy;
        bilinear(img, sy, sx, ch)
    })
}

pub fn flip_horizontal(img: &Image) -> Image {
    let (h, w, c) = img.dims();
    Image::from_fn(h, w, c, |y, x, ch| img.get(y, w - 1 - x, ch))
}

/// Per-pixel luma (ITU-R BT.601) of an RGB image.
pub fn luma(img: &Image, y: usize, x: usize) -> f64 {
    0.299 * img.get(y, x, 0) + 0.587 * img.get(y, x, 1) + 0.114 * img.get(y, x, 2)
}

/// Blend each pixel toward its own gray level: `factor = 1` is the identity.
pub fn saturate(img: &Image, factor: f64) -> Image {
    let (h, w, c) = img.dims();
    Image::from_fn(h, w, c, |y, x, ch| {
        let g = luma(img, y, x);
        g + factor * (img.get(y, x, ch) - g)
    })
    .clamp01()
}

/// Blend toward the mean intensity: `factor = 1` is the identity.
pub fn contrast(img: &Image, factor: f64) -> Image {
    let mean = img.as_slice().iter().sum::<f64>() / img.as_slice().len() as f64;
    img.map(|v| mean + factor * (v - mean)).clamp01()
}

/// Round trip through baseline JPEG at `quality` (1–100).
pub fn jpeg_roundtrip(img: &Image, quality: u8) -> Result<Image> {
    let rgb = img.to_rgb8()?;
    let mut bytes = Vec::new();
    let err = |e: image::ImageError| Error::Image {
        path: "<jpeg>".into(),
        msg: e.to_string(),
    };
    JpegEncoder::new_with_quality(&mut bytes, quality)
        .encode_image(&DynamicImage::ImageRgb8(rgb))
        .map_err(err)?;
    let dec = JpegDecoder::new(std::io::Cursor::new(bytes)).map_err(err)?;
    let (w, h) = dec.dimensions();
    let mut raw = vec![0u8; dec.total_bytes() as usize];
    dec.read_image(&mut raw).map_err(err)?;
    let data = raw.iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(h as usize, w as usize, 3, data)
}
