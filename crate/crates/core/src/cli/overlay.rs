//! Detection overlays: green boxes for detections, yellow for ground truth.

use image::{Rgb, RgbImage};

use crate::metrics::Point;

pub const GREEN: Rgb<u8> = Rgb([0, 255, 0]);
pub const YELLOW: Rgb<u8> = Rgb([255, 255, 0]);
pub const LINE_WIDTH: i64 = 2;

/// Outline of a `side`-pixel square whose top-left is `center − side/2`
/// (center rounded), `LINE_WIDTH` pixels thick and drawn inward. Parts
/// outside the image are clipped.
pub fn draw_box(img: &mut RgbImage, center: Point, side: usize, color: Rgb<u8>) {
    let side = side as i64;
    let x0 = center.x.round() as i64 - side / 2;
    let y0 = center.y.round() as i64 - side / 2;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let t = LINE_WIDTH.min(side);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            let edge = x - x0 < t || x0 + side - 1 - x < t || y - y0 < t || y0 + side - 1 - y < t;
            if edge && x >= 0 && y >= 0 && x < w && y < h {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

/// Copy of `image` with detection boxes, then ground-truth boxes on top.
pub fn render_overlay(image: &RgbImage, detections: &[Point], truth: &[Point], side: usize) -> RgbImage {
    let mut out = image.clone();
    for &d in detections {
        draw_box(&mut out, d, side, GREEN);
    }
    for &g in truth {
        draw_box(&mut out, g, side, YELLOW);
    }
    out
}
