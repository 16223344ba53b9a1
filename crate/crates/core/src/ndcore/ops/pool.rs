//! Reductions over space or channels, plus the small pooling windows the
//! classifier stem needs.

use crate::error::{shape_err, Result};
use crate::ndcore::element::Element;
use crate::ndcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// H×W → 1×1 mean.
    GlobalAvg,
    /// H×W → 1×1 max.
    GlobalMax,
    /// C → 1 mean.
    ChannelAvg,
    /// C → 1 max.
    ChannelMax,
}

/// Max reductions route the gradient to a single element; ties go to the
/// first index in row-major order.
pub fn pooled_reduction<T: Element>(input: &Tensor<T>, kind: Reduction) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let hw = h * w;
    let x = input.data();
    match kind {
        Reduction::GlobalAvg => {
            let inv = T::lit(1.0 / hw as f64);
            let out: Vec<T> = x.chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
            drop(x);
            Ok(Tensor::from_op(out, vec![n, c, 1, 1], "global_avg", vec![input.clone()], move |g, _| {
                let mut dx = Vec::with_capacity(n * c * hw);
                for &gv in g {
                    dx.extend(std::iter::repeat(gv * inv).take(hw));
                }
                vec![Some(dx)]
            }))
        }
        Reduction::GlobalMax => {
            let mut out = Vec::with_capacity(n * c);
            let mut arg = Vec::with_capacity(n * c);
            for (pi, p) in x.chunks(hw).enumerate() {
                let (mut bi, mut bv) = (0, p[0]);
                for (i, &v) in p.iter().enumerate().skip(1) {
                    if v > bv {
                        bi = i;
                        bv = v;
                    }
                }
                out.push(bv);
                arg.push(pi * hw + bi);
            }
            drop(x);
            Ok(Tensor::from_op(out, vec![n, c, 1, 1], "global_max", vec![input.clone()], move |g, _| {
                let mut dx = vec![T::zero(); n * c * hw];
                for (&a, &gv) in arg.iter().zip(g) {
                    dx[a] = dx[a] + gv;
                }
                vec![Some(dx)]
            }))
        }
        Reduction::ChannelAvg => {
            let inv = T::lit(1.0 / c as f64);
            let mut out = vec![T::zero(); n * hw];
            for b in 0..n {
                let o = &mut out[b * hw..(b + 1) * hw];
                for ch in 0..c {
                    let p = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    o.iter_mut().zip(p).for_each(|(a, &v)| *a = *a + v);
                }
                o.iter_mut().for_each(|v| *v = *v * inv);
            }
            drop(x);
            Ok(Tensor::from_op(out, vec![n, 1, h, w], "channel_avg", vec![input.clone()], move |g, _| {
                let mut dx = vec![T::zero(); n * c * hw];
                for b in 0..n {
                    for ch in 0..c {
                        let d = &mut dx[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                        d.iter_mut()
                            .zip(&g[b * hw..(b + 1) * hw])
                            .for_each(|(a, &gv)| *a = gv * inv);
                    }
                }
                vec![Some(dx)]
            }))
        }
        Reduction::ChannelMax => {
            let mut out = vec![T::zero(); n * hw];
            let mut arg = vec![0usize; n * hw];
            for b in 0..n {
                for i in 0..hw {
                    // channel-major scan: lowest channel index wins ties
                    let (mut bc, mut bv) = (0, x[b * c * hw + i]);
                    for ch in 1..c {
                        let v = x[(b * c + ch) * hw + i];
                        if v > bv {
                            bc = ch;
                            bv = v;
                        }
                    }
                    out[b * hw + i] = bv;
                    arg[b * hw + i] = (b * c + bc) * hw + i;
                }
            }
            drop(x);
            Ok(Tensor::from_op(out, vec![n, 1, h, w], "channel_max", vec![input.clone()], move |g, _| {
                let mut dx = vec![T::zero(); n * c * hw];
                for (&a, &gv) in arg.iter().zip(g) {
                    dx[a] = dx[a] + gv;
                }
                vec![Some(dx)]
            }))
        }
    }
}

pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    pooled_reduction(x, Reduction::GlobalAvg)
}

pub fn global_max_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    pooled_reduction(x, Reduction::GlobalMax)
}

pub fn channel_avg<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    pooled_reduction(x, Reduction::ChannelAvg)
}

pub fn channel_max<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    pooled_reduction(x, Reduction::ChannelMax)
}

/// 2×2 mean pooling with stride 2. H and W must be even.
pub fn avg_pool2x<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("avg_pool2x needs even extents, got {h}×{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let quarter = T::lit(0.25);
    let mut out = vec![T::zero(); n * c * ho * wo];
    for p in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let i = p * h * w + 2 * oy * w + 2 * ox;
                out[(p * ho + oy) * wo + ox] = (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]) * quarter;
            }
        }
    }
    drop(x);
    Ok(Tensor::from_op(out, vec![n, c, ho, wo], "avg_pool2x", vec![input.clone()], move |g, _| {
        let mut dx = vec![T::zero(); n * c * h * w];
        for p in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let gv = g[(p * ho + oy) * wo + ox] * quarter;
                    let i = p * h * w + 2 * oy * w + 2 * ox;
                    for j in [i, i + 1, i + w, i + w + 1] {
                        dx[j] = gv;
                    }
                }
            }
        }
        vec![Some(dx)]
    }))
}

/// k×k max pooling with the given stride and zero-free padding (padded taps
/// never win).
pub fn max_pool2d<T: Element>(input: &Tensor<T>, k: usize, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
        return Err(shape_err!("max_pool2d window {k} does not fit {h}×{w}"));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let x = input.data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    let mut arg = vec![0usize; n * c * ho * wo];
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best: Option<(usize, T)> = None;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        let v = x[idx];
                        if best.is_none_or(|(_, bv)| v > bv) {
                            best = Some((idx, v));
                        }
                    }
                }
                let (bi, bv) = best.expect("window overlaps the input");
                out[(p * ho + oy) * wo + ox] = bv;
                arg[(p * ho + oy) * wo + ox] = bi;
            }
        }
    }
    drop(x);
    Ok(Tensor::from_op(out, vec![n, c, ho, wo], "max_pool2d", vec![input.clone()], move |g, _| {
        let mut dx = vec![T::zero(); n * c * h * w];
        for (&a, &gv) in arg.iter().zip(g) {
            dx[a] = dx[a] + gv;
        }
        vec![Some(dx)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_reduces_to_constant() {
        let x = Tensor::<f32>::full(&[2, 3, 4, 5], 1.25);
        for kind in [
            Reduction::GlobalAvg,
            Reduction::GlobalMax,
            Reduction::ChannelAvg,
            Reduction::ChannelMax,
        ] {
            let y = pooled_reduction(&x, kind).unwrap();
            assert!(y.to_vec().iter().all(|&v| (v - 1.25).abs() < 1e-6), "{kind:?}");
        }
    }

    #[test]
    fn global_max_unique_argmax_gradient_mask() {
        let mut v = vec![0.0f32; 16];
        v[6] = 3.0;
        let x = Tensor::parameter(v, &[1, 1, 4, 4]).unwrap();
        let y = global_max_pool(&x).unwrap();
        assert_eq!(y.item(), 3.0);
        y.backward().unwrap();
        let g = x.grad().unwrap();
        assert_eq!(g.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(g[6], 1.0);
    }

    #[test]
    fn max_ties_route_to_first_index() {
        let x = Tensor::parameter(vec![2.0f32, 1.0, 2.0, 2.0], &[1, 1, 2, 2]).unwrap();
        let y = global_max_pool(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);

        let x = Tensor::parameter(vec![5.0f32, 5.0], &[1, 2, 1, 1]).unwrap();
        let y = channel_max(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn channel_avg_matches_loop() {
        let data: Vec<f32> = (0..16).map(|i| ((i * 7) % 5) as f32 - 1.3).collect();
        let x = Tensor::from_vec(data.clone(), &[1, 4, 2, 2]).unwrap();
        let y = channel_avg(&x).unwrap().to_vec();
        for p in 0..4 {
            let want: f32 = (0..4).map(|c| data[c * 4 + p]).sum::<f32>() / 4.0;
            assert!((y[p] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn max_pool_stem_shape() {
        let x = Tensor::<f32>::zeros(&[1, 2, 64, 64]);
        let y = max_pool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 32, 32]);
    }
}
