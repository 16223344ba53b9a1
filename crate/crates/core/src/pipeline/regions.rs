//! Connected components and candidate crops.

use image::{Rgb, RgbImage};

use crate::metrics::Point;

use super::tiling::ProbMap;

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub label: u32,
    pub area: usize,
    /// Mean of member pixel coordinates (x = column, y = row).
    pub centroid: Point,
    pub bbox: BBox,
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            let p = self.parent[a as usize];
            self.parent[a as usize] = self.parent[p as usize];
            a = p;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Label map (0 = background, components numbered 1.. in raster order of
/// their first pixel) under 8-connectivity.
pub fn label_map(fg: &[bool], height: usize, width: usize) -> (Vec<u32>, u32) {
    let mut uf = UnionFind { parent: vec![0] };
    let mut prov = vec![0u32; height * width];
    for y in 0..height {
        for x in 0..width {
            if !fg[y * width + x] {
                continue;
            }
            let mut lab = 0u32;
            let mut neigh = |yy: usize, xx: usize, lab: &mut u32| {
                let l = prov[yy * width + xx];
                if l != 0 {
                    *lab = if *lab == 0 { l } else { uf.union(*lab, l) };
                }
            };
            if y > 0 {
                if x > 0 {
                    neigh(y - 1, x - 1, &mut lab);
                }
                neigh(y - 1, x, &mut lab);
                if x + 1 < width {
                    neigh(y - 1, x + 1, &mut lab);
                }
            }
            if x > 0 {
                neigh(y, x - 1, &mut lab);
            }
            prov[y * width + x] = if lab == 0 { uf.make() } else { lab };
        }
    }
    // Second pass: resolve roots and renumber in order of first appearance.
    let mut remap = vec![0u32; uf.parent.len()];
    let mut next = 0u32;
    for v in prov.iter_mut() {
        if *v == 0 {
            continue;
        }
        let root = uf.find(*v) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        *v = remap[root];
    }
    (prov, next)
}

/// Components of `prob > threshold`.
pub fn label_regions(prob: &ProbMap, threshold: f32) -> Vec<Region> {
    scored_regions(prob, threshold).into_iter().map(|(r, _)| r).collect()
}

/// Components with the mean probability over their pixels.
pub fn scored_regions(prob: &ProbMap, threshold: f32) -> Vec<(Region, f64)> {
    let (h, w) = (prob.height, prob.width);
    let fg: Vec<bool> = prob.data.iter().map(|&v| v > threshold).collect();
    let (labels, n) = label_map(&fg, h, w);
    let mut acc = vec![(0usize, 0.0f64, 0.0f64, usize::MAX, usize::MAX, 0usize, 0usize); n as usize];
    let mut mass = vec![0.0f64; n as usize];
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            mass[l as usize - 1] += prob.data[y * w + x] as f64;
            let a = &mut acc[l as usize - 1];
            a.0 += 1;
            a.1 += x as f64;
            a.2 += y as f64;
            a.3 = a.3.min(x);
            a.4 = a.4.min(y);
            a.5 = a.5.max(x);
            a.6 = a.6.max(y);
        }
    }
    acc.into_iter()
        .zip(mass)
        .enumerate()
        .map(|(i, ((area, sx, sy, x0, y0, x1, y1), m))| {
            let r = Region {
                label: i as u32 + 1,
                area,
                centroid: Point::new(sx / area as f64, sy / area as f64),
                bbox: BBox { x0, y0, x1, y1 },
            };
            (r, m / area as f64)
        })
        .collect()
}

/// `crop_size`² window whose center pixel is the rounded centroid; pixels
/// outside the image are black.
pub fn crop_centered(image: &RgbImage, center: Point, crop_size: usize) -> RgbImage {
    let half = (crop_size / 2) as i64;
    let x0 = center.x.round() as i64 - half;
    let y0 = center.y.round() as i64 - half;
    let (w, h) = (image.width() as i64, image.height() as i64);
    RgbImage::from_fn(crop_size as u32, crop_size as u32, |x, y| {
        let (sx, sy) = (x0 + x as i64, y0 + y as i64);
        if sx < 0 || sy < 0 || sx >= w || sy >= h {
            Rgb([0, 0, 0])
        } else {
            *image.get_pixel(sx as u32, sy as u32)
        }
    })
}

/// Regions with `area > min_area`, each with its centered crop.
pub fn extract_candidates(
    image: &RgbImage,
    regions: &[Region],
    min_area: usize,
    crop_size: usize,
) -> Vec<(RgbImage, Region)> {
    regions
        .iter()
        .filter(|r| r.area > min_area)
        .map(|r| (crop_centered(image, r.centroid, crop_size), r.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, on: &[(usize, usize)]) -> ProbMap {
        let mut m = ProbMap::filled(h, w, 0.0);
        for &(y, x) in on {
            m.data[y * w + x] = 1.0;
        }
        m
    }

    #[test]
    fn single_pixel() {
        let r = label_regions(&map(10, 10, &[(7, 5)]), 0.5);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].area, 1);
        assert_eq!(r[0].centroid, Point::new(5.0, 7.0));
    }

    #[test]
    fn diagonal_neighbours_join() {
        assert_eq!(label_regions(&map(4, 4, &[(0, 0), (1, 1)]), 0.5).len(), 1);
        assert_eq!(label_regions(&map(4, 4, &[(0, 3), (1, 2)]), 0.5).len(), 1);
        assert_eq!(label_regions(&map(4, 4, &[(0, 0), (2, 2)]), 0.5).len(), 2);
    }

    #[test]
    fn u_shape_merges() {
        let on = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2)];
        let r = label_regions(&map(3, 3, &on), 0.5);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].area, 7);
    }

    #[test]
    fn threshold_is_strict() {
        let mut m = ProbMap::filled(2, 2, 0.5);
        assert!(label_regions(&m, 0.5).is_empty());
        m.data[0] = 0.51;
        assert_eq!(label_regions(&m, 0.5).len(), 1);
    }

    #[test]
    fn corner_crop_pads_black() {
        let img = RgbImage::from_pixel(100, 100, Rgb([200, 100, 50]));
        let c = crop_centered(&img, Point::new(0.0, 0.0), 64);
        assert_eq!(*c.get_pixel(0, 0), Rgb([0, 0, 0]));
        assert_eq!(*c.get_pixel(31, 31), Rgb([0, 0, 0]));
        assert_eq!(*c.get_pixel(32, 32), Rgb([200, 100, 50]));
        assert_eq!(*c.get_pixel(63, 10), Rgb([0, 0, 0]));
    }
}
