//! Training patch sampling and online augmentation.

use std::str::FromStr;

use image::{imageops, GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchStrategy {
    Sliding,
    Random,
    MitosisCentered,
}

impl FromStr for PatchStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sliding" => Ok(PatchStrategy::Sliding),
            "random" => Ok(PatchStrategy::Random),
            "mitosis_centered" => Ok(PatchStrategy::MitosisCentered),
            _ => Err(Error::Config(format!(
                "unknown patch strategy `{s}` (sliding, random, mitosis_centered)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchSpec {
    pub strategy: PatchStrategy,
    pub patch: usize,
    pub overlap: usize,
    /// Random draws; ignored by the other strategies.
    pub count: usize,
    /// Uniform ± jitter for centered patches.
    pub jitter: i64,
    pub seed: u64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            strategy: PatchStrategy::Sliding,
            patch: 256,
            overlap: 32,
            count: 16,
            jitter: 16,
            seed: 0,
        }
    }
}

/// Top-left positions along one axis with the last window clamped to the edge.
pub fn sliding_positions(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..).map(|i| i * stride).take_while(|&p| p + patch < dim).collect();
    v.push(dim - patch);
    v.dedup();
    v
}

pub fn crop_pair(image: &RgbImage, mask: &GrayImage, x: usize, y: usize, size: usize) -> (RgbImage, GrayImage) {
    let (x, y, s) = (x as u32, y as u32, size as u32);
    (
        imageops::crop_imm(image, x, y, s, s).to_image(),
        imageops::crop_imm(mask, x, y, s, s).to_image(),
    )
}

pub fn prepare_patches(
    image: &RgbImage,
    mask: &GrayImage,
    centroids: &[Point],
    spec: &PatchSpec,
) -> Result<Vec<(RgbImage, GrayImage)>> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if (mask.width() as usize, mask.height() as usize) != (w, h) {
        return Err(Error::Data(format!(
            "mask {}×{} does not match image {w}×{h}",
            mask.width(),
            mask.height()
        )));
    }
    let p = spec.patch;
    if p == 0 || p > w || p > h {
        return Err(Error::Config(format!("patch {p} does not fit a {w}×{h} image")));
    }
    if spec.strategy == PatchStrategy::Sliding && spec.overlap >= p {
        return Err(Error::Config(format!("overlap {} must be below patch size {p}", spec.overlap)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let corners: Vec<(usize, usize)> = match spec.strategy {
        PatchStrategy::Sliding => {
            let stride = p - spec.overlap;
            let ys = sliding_positions(h, p, stride);
            let xs = sliding_positions(w, p, stride);
            ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect()
        }
        PatchStrategy::Random => (0..spec.count)
            .map(|_| (rng.random_range(0..=w - p), rng.random_range(0..=h - p)))
            .collect(),
        PatchStrategy::MitosisCentered => centroids
            .iter()
            .map(|c| {
                let jx = if spec.jitter > 0 { rng.random_range(-spec.jitter..=spec.jitter) } else { 0 };
                let jy = if spec.jitter > 0 { rng.random_range(-spec.jitter..=spec.jitter) } else { 0 };
                let cx = c.x.round() as i64 + jx - (p / 2) as i64;
                let cy = c.y.round() as i64 + jy - (p / 2) as i64;
                (cx.clamp(0, (w - p) as i64) as usize, cy.clamp(0, (h - p) as i64) as usize)
            })
            .collect(),
    };
    Ok(corners.into_iter().map(|(x, y)| crop_pair(image, mask, x, y, p)).collect())
}

/// Parameters drawn for one augmentation call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns.
    pub quarter_turns: u8,
    pub blur_sigma: f32,
    pub scale: f32,
}

impl AugmentDraw {
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AugmentDraw {
            hflip: rng.random(),
            vflip: rng.random(),
            quarter_turns: rng.random_range(0..4),
            blur_sigma: rng.random_range(0.0..=1.0),
            scale: rng.random_range(0.8..=1.2),
        }
    }

    pub fn identity() -> Self {
        AugmentDraw {
            hflip: false,
            vflip: false,
            quarter_turns: 0,
            blur_sigma: 0.0,
            scale: 1.0,
        }
    }
}

pub fn augment_patch(patch: &RgbImage, mask: &GrayImage, seed: u64) -> (RgbImage, GrayImage) {
    apply_augment(patch, mask, AugmentDraw::sample(seed))
}

pub fn apply_augment(patch: &RgbImage, mask: &GrayImage, d: AugmentDraw) -> (RgbImage, GrayImage) {
    let (mut img, mut m) = (patch.clone(), mask.clone());
    if d.hflip {
        imageops::flip_horizontal_in_place(&mut img);
        imageops::flip_horizontal_in_place(&mut m);
    }
    if d.vflip {
        imageops::flip_vertical_in_place(&mut img);
        imageops::flip_vertical_in_place(&mut m);
    }
    for _ in 0..d.quarter_turns {
        img = imageops::rotate270(&img);
        m = imageops::rotate270(&m);
    }
    if (d.scale - 1.0).abs() > 1e-6 {
        (img, m) = rescale_about_center(&img, &m, d.scale);
    }
    if d.blur_sigma > 0.05 {
        img = imageops::blur(&img, d.blur_sigma);
    }
    (img, m)
}

/// Zoom by `scale` about the center, keeping the extent; edges replicate.
/// Image is bilinear, mask nearest so it stays binary.
fn rescale_about_center(img: &RgbImage, mask: &GrayImage, scale: f32) -> (RgbImage, GrayImage) {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = (w as f32 / 2.0, h as f32 / 2.0);
    let src = |x: u32, y: u32| ((x as f32 + 0.5 - cx) / scale + cx - 0.5, (y as f32 + 0.5 - cy) / scale + cy - 0.5);
    let out = RgbImage::from_fn(w, h, |x, y| {
        let (sx, sy) = src(x, y);
        let sx = sx.clamp(0.0, (w - 1) as f32);
        let sy = sy.clamp(0.0, (h - 1) as f32);
        let (x0, y0) = (sx.floor() as u32, sy.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
        let px = |xx, yy| img.get_pixel(xx, yy).0.map(|v| v as f32);
        let (a, b, c, d) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
        Rgb([0, 1, 2].map(|k| {
            let top = a[k] * (1.0 - fx) + b[k] * fx;
            let bot = c[k] * (1.0 - fx) + d[k] * fx;
            (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8
        }))
    });
    let m = GrayImage::from_fn(w, h, |x, y| {
        let (sx, sy) = src(x, y);
        let xi = sx.round().clamp(0.0, (w - 1) as f32) as u32;
        let yi = sy.round().clamp(0.0, (h - 1) as f32) as u32;
        Luma([mask.get_pixel(xi, yi)[0]])
    });
    (out, m)
}
