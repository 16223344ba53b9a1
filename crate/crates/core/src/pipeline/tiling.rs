//! Overlapping tile plans and averaged stitching.

use crate::error::{shape_err, Error, Result};

/// Dense single-channel map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err!("{} values cannot fill a {height}×{width} map", data.len()));
        }
        Ok(ProbMap { height, width, data })
    }

    pub fn filled(height: usize, width: usize, v: f32) -> Self {
        ProbMap {
            height,
            width,
            data: vec![v; height * width],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// 0/1 map of `value > threshold`.
    pub fn binarize(&self, threshold: f32) -> ProbMap {
        ProbMap {
            data: self.data.iter().map(|&v| if v > threshold { 1.0 } else { 0.0 }).collect(),
            ..*self
        }
    }

    pub fn from_gray(img: &image::GrayImage) -> Self {
        ProbMap {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub window: usize,
    /// Top-left corners as (row, col).
    pub offsets: Vec<(usize, usize)>,
    /// (H, W).
    pub full_size: (usize, usize),
}

/// Fewest tiles per axis that cover `dim`, spread evenly from 0 to
/// `dim − window`.
fn axis_offsets(dim: usize, window: usize) -> Vec<usize> {
    let n = dim.div_ceil(window);
    if n <= 1 {
        return vec![0];
    }
    let span = dim - window;
    (0..n)
        .map(|i| ((i * span) as f64 / (n - 1) as f64).round() as usize)
        .collect()
}

pub fn plan_tiles(full_size: (usize, usize), window: usize) -> Result<TilePlan> {
    let (h, w) = full_size;
    if window == 0 {
        return Err(Error::Config("tile window must be positive".into()));
    }
    if window > h || window > w {
        return Err(Error::Config(format!(
            "tile window {window} exceeds image extent {h}×{w}"
        )));
    }
    let rows = axis_offsets(h, window);
    let cols = axis_offsets(w, window);
    let offsets = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    Ok(TilePlan {
        window,
        offsets,
        full_size,
    })
}

impl TilePlan {
    /// Number of tiles covering each pixel.
    pub fn coverage(&self) -> Vec<u32> {
        let (h, w) = self.full_size;
        let mut cov = vec![0u32; h * w];
        for &(r, c) in &self.offsets {
            for y in r..r + self.window {
                cov[y * w + c..y * w + c + self.window].iter_mut().for_each(|v| *v += 1);
            }
        }
        cov
    }
}

/// Average tile predictions over their overlaps.
pub fn stitch_average(tile_maps: &[ProbMap], plan: &TilePlan) -> Result<ProbMap> {
    if tile_maps.len() != plan.offsets.len() {
        return Err(Error::Contract(format!(
            "{} tile maps for a plan of {} tiles",
            tile_maps.len(),
            plan.offsets.len()
        )));
    }
    let (h, w) = plan.full_size;
    let win = plan.window;
    let mut acc = vec![0.0f64; h * w];
    for (t, &(r, c)) in tile_maps.iter().zip(&plan.offsets) {
        if (t.height, t.width) != (win, win) {
            return Err(shape_err!("tile map is {}×{}, plan window is {win}", t.height, t.width));
        }
        for y in 0..win {
            let dst = &mut acc[(r + y) * w + c..(r + y) * w + c + win];
            for (d, &v) in dst.iter_mut().zip(&t.data[y * win..(y + 1) * win]) {
                *d += v as f64;
            }
        }
    }
    let cov = plan.coverage();
    let data = acc.iter().zip(&cov).map(|(&s, &n)| (s / n as f64) as f32).collect();
    ProbMap::new(h, w, data)
}
