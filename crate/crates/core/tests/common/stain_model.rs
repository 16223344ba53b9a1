//! Beer-Lambert forward model for synthetic stain images.

use image::RgbImage;
use mitoseg::pipeline::synth::CANONICAL_STAIN;
use mitoseg::stain::{compose_od, od_to_rgb, DEFAULT_IO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn col(m: &[[f64; 2]; 3], j: usize) -> [f64; 3] {
    [m[0][j], m[1][j], m[2][j]]
}

pub fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

/// Stain matrix perturbed around the canonical one.
pub fn random_matrix(rng: &mut ChaCha8Rng) -> [[f64; 2]; 3] {
    let mut h = col(&CANONICAL_STAIN, 0);
    let mut e = col(&CANONICAL_STAIN, 1);
    for c in 0..3 {
        h[c] = (h[c] + rng.random_range(-0.08..0.08f64)).max(0.02);
        e[c] = (e[c] + rng.random_range(-0.08..0.08f64)).max(0.02);
    }
    let (h, e) = (unit(h), unit(e));
    [[h[0], e[0]], [h[1], e[1]], [h[2], e[2]]]
}

/// Beer–Lambert forward model: a third of the pixels pure hematoxylin, a
/// third pure eosin, the rest mixed. Returns the image and concentrations.
pub fn forward_image(m: &[[f64; 2]; 3], size: u32, scale: f64, seed: u64) -> (RgbImage, Vec<[f64; 2]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (size * size) as usize;
    let conc: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a = rng.random_range(0.2..1.5);
            let b = rng.random_range(0.2..1.5);
            let c = match rng.random_range(0..3) {
                0 => [a, 0.0],
                1 => [0.0, b],
                _ => [a, b],
            };
            c.map(|v| v * scale)
        })
        .collect();
    let od: Vec<[f64; 3]> = conc.iter().map(|&c| compose_od(m, c)).collect();
    (od_to_rgb(&od, size, size, DEFAULT_IO).unwrap(), conc)
}
