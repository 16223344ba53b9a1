//! Synthetic H&E-like fields with planted mitosis figures and confounders.

use image::{GrayImage, Luma, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::Point;
use crate::stain::{compose_od, od_pixel_to_rgb, DEFAULT_IO};

/// Hematoxylin and eosin OD vectors the generator stains with (columns).
pub const CANONICAL_STAIN: [[f64; 2]; 3] = [[0.650, 0.072], [0.704, 0.990], [0.286, 0.105]];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Inclusive count range per image.
    pub mitosis_count: (usize, usize),
    pub confounder_count: (usize, usize),
    /// Ellipse semi-axis range in pixels.
    pub mitosis_radius: (f64, f64),
    pub confounder_radius: (f64, f64),
    /// Hematoxylin concentration range per class.
    pub mitosis_hema: (f64, f64),
    pub confounder_hema: (f64, f64),
    /// Amplitude of the clumped chromatin texture.
    pub mitosis_texture: f64,
    pub confounder_texture: f64,
    pub stain_matrix: [[f64; 2]; 3],
    /// Per-image random perturbation of the stain vectors (radians, std).
    pub stain_jitter: f64,
    pub background_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 512,
            mitosis_count: (3, 6),
            confounder_count: (6, 12),
            mitosis_radius: (7.0, 11.0),
            confounder_radius: (6.0, 12.0),
            mitosis_hema: (1.1, 1.6),
            confounder_hema: (0.5, 1.2),
            mitosis_texture: 0.45,
            confounder_texture: 0.04,
            stain_matrix: CANONICAL_STAIN,
            stain_jitter: 0.0,
            background_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("mitosis_radius", self.mitosis_radius),
            ("confounder_radius", self.confounder_radius),
            ("mitosis_hema", self.mitosis_hema),
            ("confounder_hema", self.confounder_hema),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::Config(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        if self.mitosis_count.0 > self.mitosis_count.1 || self.confounder_count.0 > self.confounder_count.1 {
            return Err(Error::Config("count ranges must have min ≤ max".into()));
        }
        if self.image_size < 64 {
            return Err(Error::Config(format!("image_size {} is below 64", self.image_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub id: String,
    pub image: RgbImage,
    /// 255 on mitosis pixels.
    pub mask: GrayImage,
    pub centroids: Vec<Point>,
    pub confounders: Vec<Point>,
}

#[derive(Debug, Clone, Default)]
pub struct SynthDataset {
    pub images: Vec<SynthImage>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    mitosis: bool,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// Normalized radial position, 0 at the center and 1 on the boundary.
    fn radial(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }
}

/// Smooth field in [-1, 1] from a few random plane waves.
struct Waves(Vec<(f64, f64, f64)>);

impl Waves {
    fn new(rng: &mut ChaCha8Rng, n: usize, max_freq: f64) -> Self {
        Waves(
            (0..n)
                .map(|_| {
                    let ang = rng.random_range(0.0..std::f64::consts::TAU);
                    let f = rng.random_range(0.2 * max_freq..max_freq);
                    (f * ang.cos(), f * ang.sin(), rng.random_range(0.0..std::f64::consts::TAU))
                })
                .collect(),
        )
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.0.iter().map(|&(fx, fy, ph)| (fx * x + fy * y + ph).sin()).sum::<f64>() / self.0.len() as f64
    }
}

fn jittered_stain(m: &[[f64; 2]; 3], sigma: f64, rng: &mut ChaCha8Rng) -> [[f64; 2]; 3] {
    if sigma <= 0.0 {
        return *m;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let mut out = *m;
    for j in 0..2 {
        let mut col = [0, 1, 2].map(|r| (m[r][j] + normal.sample(rng)).max(1e-3));
        let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        col.iter_mut().for_each(|v| *v /= n);
        for r in 0..3 {
            out[r][j] = col[r];
        }
    }
    out
}

pub fn image_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn generate_one(config: &SynthConfig, id: String, seed: u64, warnings: &mut Vec<String>) -> SynthImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bg_rng = ChaCha8Rng::seed_from_u64(seed ^ config.background_seed.rotate_left(17));
    let s = config.image_size;
    let stain = jittered_stain(&config.stain_matrix, config.stain_jitter, &mut rng);

    let w_e = Waves::new(&mut bg_rng, 6, 0.08);
    let w_h = Waves::new(&mut bg_rng, 6, 0.15);
    let mut conc: Vec<[f64; 2]> = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let (xf, yf) = (x as f64, y as f64);
            conc.push([0.08 + 0.05 * w_h.at(xf, yf), 0.28 + 0.12 * w_e.at(xf, yf)]);
        }
    }

    let n_mit = rng.random_range(config.mitosis_count.0..=config.mitosis_count.1);
    let n_conf = rng.random_range(config.confounder_count.0..=config.confounder_count.1);
    let mut placed: Vec<Ellipse> = Vec::new();
    let kinds = std::iter::repeat_n(true, n_mit).chain(std::iter::repeat_n(false, n_conf));
    for mitosis in kinds {
        let (lo, hi) = if mitosis { config.mitosis_radius } else { config.confounder_radius };
        let mut ok = false;
        for _ in 0..200 {
            let a = rng.random_range(lo..=hi);
            let b = rng.random_range(lo..=hi).min(a).max(lo);
            let margin = a + 3.0;
            if 2.0 * margin >= s as f64 {
                break;
            }
            let e = Ellipse {
                cx: rng.random_range(margin..s as f64 - margin),
                cy: rng.random_range(margin..s as f64 - margin),
                a,
                b,
                theta: rng.random_range(0.0..std::f64::consts::PI),
                mitosis,
            };
            if placed.iter().all(|o| (o.cx - e.cx).hypot(o.cy - e.cy) > o.a + e.a + 6.0) {
                placed.push(e);
                ok = true;
                break;
            }
        }
        if !ok {
            warnings.push(format!(
                "{id}: could not place a {} nucleus after 200 attempts",
                if mitosis { "mitosis" } else { "confounder" }
            ));
        }
    }

    let mut mask = GrayImage::new(s as u32, s as u32);
    let mut centroids = Vec::new();
    let mut confounders = Vec::new();
    for e in &placed {
        let (hlo, hhi) = if e.mitosis { config.mitosis_hema } else { config.confounder_hema };
        let base = rng.random_range(hlo..=hhi);
        let tex = if e.mitosis { config.mitosis_texture } else { config.confounder_texture };
        let x0 = (e.cx - e.a - 1.0).floor().max(0.0) as usize;
        let x1 = ((e.cx + e.a + 1.0).ceil() as usize).min(s - 1);
        let y0 = (e.cy - e.a - 1.0).floor().max(0.0) as usize;
        let y1 = ((e.cy + e.a + 1.0).ceil() as usize).min(s - 1);
        // Clumped texture: coarse 2×2 cells of random intensity.
        let cells_w = (x1 - x0) / 2 + 2;
        let cells: Vec<f64> = (0..cells_w * cells_w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (xf, yf) = (x as f64, y as f64);
                if !e.contains(xf, yf) {
                    continue;
                }
                let cell = cells[((y - y0) / 2).min(cells_w - 1) * cells_w + ((x - x0) / 2).min(cells_w - 1)];
                let r = e.radial(xf, yf);
                let hema = if e.mitosis {
                    base * (1.0 + tex * cell)
                } else {
                    base * (1.0 - 0.2 * r * r) * (1.0 + tex * cell)
                };
                conc[y * s + x] = [hema.max(0.0), 0.12];
                if e.mitosis {
                    mask.put_pixel(x as u32, y as u32, Luma([255]));
                    sx += xf;
                    sy += yf;
                    n += 1;
                }
            }
        }
        if e.mitosis {
            centroids.push(Point::new(sx / n as f64, sy / n as f64));
        } else {
            confounders.push(Point::new(e.cx, e.cy));
        }
    }

    let noise = Normal::new(0.0, 0.01).expect("positive sigma");
    let image = RgbImage::from_fn(s as u32, s as u32, |x, y| {
        let c = conc[y as usize * s + x as usize];
        let od = compose_od(&stain, c).map(|v| v + noise.sample(&mut rng));
        od_pixel_to_rgb(od, DEFAULT_IO)
    });
    SynthImage {
        id,
        image,
        mask,
        centroids,
        confounders,
    }
}

pub fn generate_synthetic(config: &SynthConfig, n_images: usize, seed: u64) -> Result<SynthDataset> {
    config.validate()?;
    let mut ds = SynthDataset::default();
    for i in 0..n_images {
        let img = generate_one(config, format!("img_{i:03}"), image_seed(seed, i), &mut ds.warnings);
        ds.images.push(img);
    }
    for w in &ds.warnings {
        log::warn!("{w}");
    }
    Ok(ds)
}
