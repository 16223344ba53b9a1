use crate::error::Result;
use crate::ndcore::element::Element;
use crate::ndcore::Tensor;

/// Two-tap linear interpolation weights along one axis, half-pixel centers,
/// source coordinates clamped to the border.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

pub fn linear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            let w1 = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - w1,
                w1,
            }
        })
        .collect()
}

/// Separable bilinear resampling of each H×W plane to `oh`×`ow`.
pub(crate) fn resample_planes<T: Element>(
    x: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut row = vec![T::zero(); ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, t) in ty.iter().enumerate() {
            let (r0, r1) = (&src[t.i0 * w..(t.i0 + 1) * w], &src[t.i1 * w..(t.i1 + 1) * w]);
            let (a, b) = (T::lit(t.w0), T::lit(t.w1));
            for (ox, tx) in tx.iter().enumerate() {
                let top = r0[tx.i0] * T::lit(tx.w0) + r0[tx.i1] * T::lit(tx.w1);
                let bot = r1[tx.i0] * T::lit(tx.w0) + r1[tx.i1] * T::lit(tx.w1);
                row[ox] = top * a + bot * b;
            }
            dst[oy * ow..(oy + 1) * ow].copy_from_slice(&row);
        }
    }
    out
}

fn resample_planes_adjoint<T: Element>(
    g: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let go = &g[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, t) in ty.iter().enumerate() {
            let (a, b) = (T::lit(t.w0), T::lit(t.w1));
            for (ox, tx) in tx.iter().enumerate() {
                let gv = go[oy * ow + ox];
                let (c0, c1) = (T::lit(tx.w0), T::lit(tx.w1));
                let i00 = t.i0 * w + tx.i0;
                let i01 = t.i0 * w + tx.i1;
                let i10 = t.i1 * w + tx.i0;
                let i11 = t.i1 * w + tx.i1;
                d[i00] = d[i00] + gv * a * c0;
                d[i01] = d[i01] + gv * a * c1;
                d[i10] = d[i10] + gv * b * c0;
                d[i11] = d[i11] + gv * b * c1;
            }
        }
    }
    dx
}

/// Differentiable bilinear resize of an N×C×H×W tensor.
pub fn bilinear_resize<T: Element>(input: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if oh == 0 || ow == 0 {
        return Err(crate::error::shape_err!("resize target {oh}×{ow} is empty"));
    }
    let out = resample_planes(&input.data(), n * c, (h, w), (oh, ow));
    Ok(Tensor::from_op(out, vec![n, c, oh, ow], "bilinear_resize", vec![input.clone()], move |g, _| {
        vec![Some(resample_planes_adjoint(g, n * c, (h, w), (oh, ow)))]
    }))
}

/// Doubles H and W by bilinear interpolation.
pub fn bilinear_upsample_2x<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, h, w) = input.dims4()?;
    bilinear_resize(input, 2 * h, 2 * w)
}
