//! Optical-density stain separation and normalization (Macenko).

use std::fmt;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

pub const DEFAULT_IO: f64 = 255.0;
pub const DEFAULT_OD_THRESHOLD: f64 = 0.15;
pub const DEFAULT_ANGLE_PERCENTILE: f64 = 1.0;
pub const MIN_TISSUE_PIXELS: usize = 100;
const MAX_PERCENTILE: f64 = 99.0;

/// Checked-in target profile, estimated from the synthetic generator's
/// canonical stain matrix.
pub const REFERENCE_PROFILE_TEXT: &str = include_str!("../assets/reference_profile.txt");

/// Stain vectors (columns: hematoxylin, eosin) in OD space plus the
/// per-stain 99th-percentile concentrations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainProfile {
    /// Row-major 3×2: `stain_matrix[channel][stain]`.
    pub stain_matrix: [[f64; 2]; 3],
    pub max_concentrations: [f64; 2],
    pub io: f64,
}

impl StainProfile {
    pub fn new(h: [f64; 3], e: [f64; 3], max_concentrations: [f64; 2]) -> Result<Self> {
        let (h, e) = (unit(h)?, unit(e)?);
        let p = StainProfile {
            stain_matrix: [[h[0], e[0]], [h[1], e[1]], [h[2], e[2]]],
            max_concentrations,
            io: DEFAULT_IO,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn column(&self, j: usize) -> [f64; 3] {
        [self.stain_matrix[0][j], self.stain_matrix[1][j], self.stain_matrix[2][j]]
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..2 {
            let c = self.column(j);
            let n = norm(c);
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::Data(format!("stain vector {j} has norm {n}, expected 1")));
            }
            if c.iter().any(|&v| v < 0.0) {
                return Err(Error::Data(format!("stain vector {j} has negative entries: {c:?}")));
            }
        }
        if self.max_concentrations.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::Data(format!(
                "max concentrations must be positive, got {:?}",
                self.max_concentrations
            )));
        }
        Ok(())
    }

    /// Six matrix entries column-major, then the two max concentrations.
    pub fn to_text(&self) -> String {
        format!("{self}\n")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let nums: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Data(format!("bad number `{t}` in stain profile"))))
            .collect::<Result<_>>()?;
        if nums.len() != 8 {
            return Err(Error::Data(format!("stain profile needs 8 numbers, found {}", nums.len())));
        }
        let p = StainProfile {
            stain_matrix: [[nums[0], nums[3]], [nums[1], nums[4]], [nums[2], nums[5]]],
            max_concentrations: [nums[6], nums[7]],
            io: DEFAULT_IO,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::ndcore::checkpoint::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn reference() -> Self {
        Self::parse(REFERENCE_PROFILE_TEXT).expect("checked-in reference profile is valid")
    }

    /// Angle in degrees between column `j` and `v`.
    pub fn angle_to(&self, j: usize, v: [f64; 3]) -> f64 {
        angle_deg(self.column(j), v)
    }
}

impl fmt::Display for StainProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.stain_matrix;
        write!(
            f,
            "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1], self.max_concentrations[0], self.max_concentrations[1]
        )
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn unit(v: [f64; 3]) -> Result<[f64; 3]> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Data(format!("cannot normalize stain vector {v:?}")));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (norm(a) * norm(b));
    d.clamp(-1.0, 1.0).acos().to_degrees()
}

/// `OD = −ln((x + 1) / io)` per channel.
pub fn rgb_to_od(image: &RgbImage, io: f64) -> Vec<[f64; 3]> {
    image
        .pixels()
        .map(|p| [0, 1, 2].map(|c| -((p[c] as f64 + 1.0) / io).ln()))
        .collect()
}

pub fn od_pixel_to_rgb(od: [f64; 3], io: f64) -> Rgb<u8> {
    Rgb(od.map(|v| (io * (-v).exp() - 1.0).round().clamp(0.0, 255.0) as u8))
}

pub fn od_to_rgb(od: &[[f64; 3]], width: u32, height: u32, io: f64) -> Result<RgbImage> {
    if od.len() != width as usize * height as usize {
        return Err(crate::error::shape_err!(
            "{} OD pixels cannot fill a {width}×{height} image",
            od.len()
        ));
    }
    Ok(RgbImage::from_fn(width, height, |x, y| {
        od_pixel_to_rgb(od[y as usize * width as usize + x as usize], io)
    }))
}

/// Nearest-rank percentile (unchanged when every sample is duplicated).
pub fn percentile(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    values[rank.clamp(1, n) - 1]
}

/// Population covariance of the OD cloud.
pub fn od_covariance(od: &[[f64; 3]]) -> Matrix3<f64> {
    let n = od.len() as f64;
    let mut mean = [0.0; 3];
    for p in od {
        for c in 0..3 {
            mean[c] += p[c] / n;
        }
    }
    let mut cov = Matrix3::zeros();
    for p in od {
        let d = Vector3::new(p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]);
        cov += d * d.transpose() / n;
    }
    cov
}

/// Unit eigenvectors of the two largest eigenvalues, largest first.
pub fn principal_directions(cov: &Matrix3<f64>) -> [[f64; 3]; 2] {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    [0, 1].map(|i| {
        let v = eig.eigenvectors.column(order[i]);
        [v[0], v[1], v[2]]
    })
}

/// Pixels whose OD magnitude reaches `threshold`.
pub fn tissue_pixels(od: &[[f64; 3]], threshold: f64) -> Vec<[f64; 3]> {
    od.iter().copied().filter(|&p| norm(p) >= threshold).collect()
}

pub fn estimate_stain_profile(image: &RgbImage, od_threshold: f64, angle_percentile: f64) -> Result<StainProfile> {
    estimate_from_od(&rgb_to_od(image, DEFAULT_IO), od_threshold, angle_percentile)
}

pub fn estimate_from_od(od: &[[f64; 3]], od_threshold: f64, angle_percentile: f64) -> Result<StainProfile> {
    if !(0.0..50.0).contains(&angle_percentile) {
        return Err(Error::Config(format!(
            "angle percentile must lie in [0, 50), got {angle_percentile}"
        )));
    }
    let tissue = tissue_pixels(od, od_threshold);
    if tissue.len() < MIN_TISSUE_PIXELS {
        return Err(Error::InsufficientTissue {
            found: tissue.len(),
            required: MIN_TISSUE_PIXELS,
        });
    }
    let [mut e1, mut e2] = principal_directions(&od_covariance(&tissue));
    // Orient the plane basis into the positive octant.
    if e1.iter().sum::<f64>() < 0.0 {
        e1 = e1.map(|v| -v);
    }
    if e2.iter().sum::<f64>() < 0.0 {
        e2 = e2.map(|v| -v);
    }
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let mut phi: Vec<f64> = tissue.iter().map(|&p| dot(p, e2).atan2(dot(p, e1))).collect();
    let lo = percentile(&mut phi, angle_percentile);
    let hi = percentile(&mut phi, 100.0 - angle_percentile);
    let dir = |a: f64| {
        let v = [0, 1, 2].map(|c| e1[c] * a.cos() + e2[c] * a.sin());
        let v = if v.iter().sum::<f64>() < 0.0 { v.map(|x| -x) } else { v };
        v.map(|x| x.max(0.0))
    };
    let (va, vb) = (dir(lo), dir(hi));
    let (h, e) = if va[2] >= vb[2] { (va, vb) } else { (vb, va) };
    let (h, e) = (unit(h)?, unit(e)?);
    let matrix = [[h[0], e[0]], [h[1], e[1]], [h[2], e[2]]];
    let pinv = pseudo_inverse(&matrix)?;
    let mut ch = Vec::with_capacity(tissue.len());
    let mut ce = Vec::with_capacity(tissue.len());
    for &p in &tissue {
        let c = apply_pinv(&pinv, p);
        ch.push(c[0].max(0.0));
        ce.push(c[1].max(0.0));
    }
    let max_concentrations = [percentile(&mut ch, MAX_PERCENTILE), percentile(&mut ce, MAX_PERCENTILE)];
    let p = StainProfile {
        stain_matrix: matrix,
        max_concentrations,
        io: DEFAULT_IO,
    };
    p.validate().map_err(|e| Error::Numeric(format!("degenerate stain estimate: {e}")))?;
    Ok(p)
}

/// `(MᵀM)⁻¹Mᵀ` as a 2×3 matrix.
pub fn pseudo_inverse(m: &[[f64; 2]; 3]) -> Result<[[f64; 3]; 2]> {
    let h = [m[0][0], m[1][0], m[2][0]];
    let e = [m[0][1], m[1][1], m[2][1]];
    let cross = [
        h[1] * e[2] - h[2] * e[1],
        h[2] * e[0] - h[0] * e[2],
        h[0] * e[1] - h[1] * e[0],
    ];
    if norm(cross) < 1e-6 * norm(h) * norm(e) {
        return Err(Error::Numeric("singular stain matrix: stain vectors are parallel".into()));
    }
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let (a, b, d) = (dot(h, h), dot(h, e), dot(e, e));
    let det = a * d - b * b;
    // inv(MᵀM) = [d −b; −b a] / det
    let (i00, i01, i11) = (d / det, -b / det, a / det);
    Ok([
        [0, 1, 2].map(|c| i00 * h[c] + i01 * e[c]),
        [0, 1, 2].map(|c| i01 * h[c] + i11 * e[c]),
    ])
}

fn apply_pinv(p: &[[f64; 3]; 2], od: [f64; 3]) -> [f64; 2] {
    [0, 1].map(|r| p[r][0] * od[0] + p[r][1] * od[1] + p[r][2] * od[2])
}

/// Beer–Lambert composition of stain concentrations into OD.
pub fn compose_od(m: &[[f64; 2]; 3], c: [f64; 2]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * c[0] + m[r][1] * c[1])
}

/// Map `image` from the `source` stain appearance onto `target`.
pub fn normalize_stain(image: &RgbImage, source: &StainProfile, target: &StainProfile) -> Result<RgbImage> {
    let pinv = pseudo_inverse(&source.stain_matrix)?;
    let scale = [0, 1].map(|j| target.max_concentrations[j] / source.max_concentrations[j]);
    let mut out = RgbImage::new(image.width(), image.height());
    for (src, dst) in image.pixels().zip(out.pixels_mut()) {
        let od = [0, 1, 2].map(|c| -((src[c] as f64 + 1.0) / source.io).ln());
        let c = apply_pinv(&pinv, od);
        let c = [0, 1].map(|j| c[j].max(0.0) * scale[j]);
        *dst = od_pixel_to_rgb(compose_od(&target.stain_matrix, c), target.io);
    }
    Ok(out)
}

pub fn mean_abs_diff(a: &RgbImage, b: &RgbImage) -> f64 {
    let n = a.as_raw().len().max(1) as f64;
    a.as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_formula() {
        let img = RgbImage::from_pixel(1, 1, Rgb([255, 255, 255]));
        assert!(rgb_to_od(&img, 255.0)[0].iter().all(|v| v.abs() < 0.004));
        let img = RgbImage::from_pixel(1, 1, Rgb([93, 93, 93]));
        let od = rgb_to_od(&img, 255.0)[0];
        assert!((od[0] - 0.998).abs() < 1e-3 && (od[0] - (-(94.0f64 / 255.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn od_round_trip() {
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([(x * 16) as u8, (y * 16) as u8, ((x + y) * 8) as u8]));
        let back = od_to_rgb(&rgb_to_od(&img, 255.0), 16, 16, 255.0).unwrap();
        for (a, b) in img.as_raw().iter().zip(back.as_raw()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn all_white_is_insufficient() {
        let img = RgbImage::from_pixel(32, 32, Rgb([255, 255, 255]));
        assert!(matches!(
            estimate_stain_profile(&img, 0.15, 1.0),
            Err(Error::InsufficientTissue { found: 0, required: 100 })
        ));
    }

    #[test]
    fn percentile_nearest_rank() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&mut v, 50.0), 2.0);
        assert_eq!(percentile(&mut v, 1.0), 1.0);
        assert_eq!(percentile(&mut v, 99.0), 4.0);
    }

    #[test]
    fn profile_text_round_trip() {
        let p = StainProfile::new([0.65, 0.70, 0.29], [0.07, 0.99, 0.11], [1.9, 1.0]).unwrap();
        let q = StainProfile::parse(&p.to_text()).unwrap();
        for j in 0..2 {
            assert!(p.angle_to(j, q.column(j)) < 1e-6);
        }
        assert!(StainProfile::parse("1 2 3").is_err());
    }

    #[test]
    fn parallel_columns_rejected() {
        let m = [[0.6, 0.6], [0.7, 0.7], [0.3, 0.3]];
        assert!(pseudo_inverse(&m).is_err());
    }

    #[test]
    fn reference_profile_loads() {
        let r = StainProfile::reference();
        assert!(r.column(0)[2] > r.column(1)[2]);
    }
}
