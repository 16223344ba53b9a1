//! Cross-correlation convolutions (no kernel flip).

use crate::error::{shape_err, Result};
use crate::ndcore::element::{matmul_acc, matmul_at_acc, matmul_bt_acc, Element};
use crate::ndcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if k % 2 == 0 {
            return Err(shape_err!("kernel size must be odd, got {k}"));
        }
        if !(stride == 1 || stride == 2) {
            return Err(shape_err!("stride must be 1 or 2, got {stride}"));
        }
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        if hp < k || wp < k {
            return Err(shape_err!(
                "kernel {k} does not fit {h}×{w} input with padding {pad}"
            ));
        }
        Ok(ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: (hp - k) / stride + 1,
            wo: (wp - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

}

/// Upper bound on unfolded elements held at once; larger outputs are
/// processed in bands of output rows.
const COLS_BUDGET: usize = 1 << 19;

/// Unfold output rows `oy0..oy1` of one C×H×W sample into a
/// (C·k·k)×(rows·Wo) matrix.
fn im2col<T: Element>(x: &[T], g: &ConvGeom, oy0: usize, oy1: usize, cols: &mut [T]) {
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    let band = (oy1 - oy0) * g.wo;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * band..(row + 1) * band];
                for oy in oy0..oy1 {
                    let iy = oy as isize * s - p + ky as isize;
                    let line = &mut dst[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        *out = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a band of columns back into a C×H×W
/// sample.
fn col2im<T: Element>(cols: &[T], g: &ConvGeom, oy0: usize, oy1: usize, dx: &mut [T]) {
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    let band = (oy1 - oy0) * g.wo;
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * band..(row + 1) * band];
                for oy in oy0..oy1 {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    for (ox, &v) in srow.iter().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Output-row bands whose unfolded size stays within [`COLS_BUDGET`].
fn bands(g: &ConvGeom) -> impl Iterator<Item = (usize, usize)> {
    let per_row = (g.c * g.k * g.k * g.wo).max(1);
    let rows = (COLS_BUDGET / per_row).clamp(1, g.ho.max(1));
    let ho = g.ho;
    (0..ho).step_by(rows).map(move |r| (r, (r + rows).min(ho)))
}

/// `input` N×C_in×H×W, `weight` C_out×C_in×k×k, optional `bias` C_out.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, c_in, h, w) = input.dims4()?;
    let (c_out, wc, kh, kw) = weight.dims4()?;
    if wc != c_in {
        return Err(shape_err!(
            "conv2d: weight expects {wc} input channels but input {:?} has {c_in}",
            input.shape()
        ));
    }
    if kh != kw {
        return Err(shape_err!("conv2d: non-square kernel {kh}×{kw}"));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(shape_err!(
                "conv2d: bias shape {:?} does not match {c_out} output channels",
                b.shape()
            ));
        }
    }
    let g = ConvGeom::new(c_in, h, w, kh, stride, padding)?;
    let hw_out = g.ho * g.wo;
    let kdim = c_in * kh * kw;
    let in_plane = c_in * h * w;
    let out_plane = c_out * hw_out;
    let col_cap = if g.is_pointwise() { 0 } else { bands(&g).map(|(a, b)| (b - a) * g.wo * kdim).max().unwrap_or(0) };

    let mut out = vec![T::zero(); n * out_plane];
    {
        let x = input.data();
        let wt = weight.data();
        let mut cols = vec![T::zero(); col_cap];
        for b in 0..n {
            let xs = &x[b * in_plane..(b + 1) * in_plane];
            let o = &mut out[b * out_plane..(b + 1) * out_plane];
            if g.is_pointwise() {
                matmul_acc(c_out, kdim, hw_out, &wt, xs, o, false);
                continue;
            }
            for (r0, r1) in bands(&g) {
                let len = (r1 - r0) * g.wo;
                im2col(xs, &g, r0, r1, &mut cols);
                T::gemm(
                    c_out,
                    kdim,
                    len,
                    T::one(),
                    &wt,
                    kdim as isize,
                    1,
                    &cols[..kdim * len],
                    len as isize,
                    1,
                    T::zero(),
                    &mut o[r0 * g.wo..],
                    hw_out as isize,
                    1,
                );
            }
        }
        if let Some(bias) = bias {
            let bv = bias.data();
            for b in 0..n {
                for (co, &bc) in bv.iter().enumerate() {
                    let s = b * out_plane + co * hw_out;
                    out[s..s + hw_out].iter_mut().for_each(|v| *v = *v + bc);
                }
            }
        }
    }

    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (xin, wt) = (input.clone(), weight.clone());
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        out,
        vec![n, c_out, g.ho, g.wo],
        "conv2d",
        parents,
        move |gout, needs| {
            let x = xin.data();
            let wv = wt.data();
            let mut dx = needs[0].then(|| vec![T::zero(); n * in_plane]);
            let mut dw = needs[1].then(|| vec![T::zero(); c_out * kdim]);
            let mut cols = vec![T::zero(); col_cap];
            let mut dcols = vec![T::zero(); if dx.is_some() { col_cap } else { 0 }];
            for b in 0..n {
                let go = &gout[b * out_plane..(b + 1) * out_plane];
                let xs = &x[b * in_plane..(b + 1) * in_plane];
                if g.is_pointwise() {
                    if let Some(dw) = dw.as_mut() {
                        // dW += dOut · xᵀ
                        matmul_bt_acc(c_out, hw_out, kdim, go, xs, dw, true);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxs = &mut dx[b * in_plane..(b + 1) * in_plane];
                        matmul_at_acc(kdim, c_out, hw_out, &wv, go, dxs, false);
                    }
                    continue;
                }
                for (r0, r1) in bands(&g) {
                    let len = (r1 - r0) * g.wo;
                    let gband = &go[r0 * g.wo..];
                    if let Some(dw) = dw.as_mut() {
                        im2col(xs, &g, r0, r1, &mut cols);
                        // dW += dOut_band · colsᵀ
                        T::gemm(
                            c_out,
                            len,
                            kdim,
                            T::one(),
                            gband,
                            hw_out as isize,
                            1,
                            &cols[..kdim * len],
                            1,
                            len as isize,
                            T::one(),
                            dw,
                            kdim as isize,
                            1,
                        );
                    }
                    if let Some(dx) = dx.as_mut() {
                        // dcols = Wᵀ · dOut_band
                        T::gemm(
                            kdim,
                            c_out,
                            len,
                            T::one(),
                            &wv,
                            1,
                            kdim as isize,
                            gband,
                            hw_out as isize,
                            1,
                            T::zero(),
                            &mut dcols[..kdim * len],
                            len as isize,
                            1,
                        );
                        col2im(&dcols, &g, r0, r1, &mut dx[b * in_plane..(b + 1) * in_plane]);
                    }
                }
            }
            let mut res = vec![dx, dw];
            if has_bias {
                let db = needs[2].then(|| {
                    let mut db = vec![T::zero(); c_out];
                    for b in 0..n {
                        for (co, d) in db.iter_mut().enumerate() {
                            let s = b * out_plane + co * hw_out;
                            *d = *d + gout[s..s + hw_out].iter().copied().sum::<T>();
                        }
                    }
                    db
                });
                res.push(db);
            }
            res
        },
    ))
}

/// Per-channel convolution: `weight` C×1×k×k, no bias.
pub fn depthwise_conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let (wc, one, kh, kw) = weight.dims4()?;
    if wc != c || one != 1 {
        return Err(shape_err!(
            "depthwise conv: weight {:?} does not match {c} input channels",
            weight.shape()
        ));
    }
    if kh != kw {
        return Err(shape_err!("depthwise conv: non-square kernel {kh}×{kw}"));
    }
    let g = ConvGeom::new(c, h, w, kh, stride, padding)?;
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    let (ho, wo) = (g.ho, g.wo);

    let mut out = vec![T::zero(); n * c * ho * wo];
    {
        let x = input.data();
        let wt = weight.data();
        for b in 0..n {
            for ch in 0..c {
                let plane = &x[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                let kern = &wt[ch * k * k..(ch + 1) * k * k];
                let o = &mut out[(b * c + ch) * ho * wo..(b * c + ch + 1) * ho * wo];
                for ky in 0..k {
                    for kx in 0..k {
                        let kv = kern[ky * k + kx];
                        for oy in 0..ho {
                            let iy = oy as isize * s - p + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut o[oy * wo..(oy + 1) * wo];
                            for (ox, ov) in orow.iter_mut().enumerate() {
                                let ix = ox as isize * s - p + kx as isize;
                                if ix >= 0 && ix < w as isize {
                                    *ov = *ov + kv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let (xin, wt) = (input.clone(), weight.clone());
    Ok(Tensor::from_op(
        out,
        vec![n, c, ho, wo],
        "depthwise_conv2d",
        vec![input.clone(), weight.clone()],
        move |gout, needs| {
            let x = xin.data();
            let wv = wt.data();
            let mut dx = needs[0].then(|| vec![T::zero(); n * c * h * w]);
            let mut dw = needs[1].then(|| vec![T::zero(); c * k * k]);
            for b in 0..n {
                for ch in 0..c {
                    let base_in = (b * c + ch) * h * w;
                    let go = &gout[(b * c + ch) * ho * wo..(b * c + ch + 1) * ho * wo];
                    for ky in 0..k {
                        for kx in 0..k {
                            let kv = wv[ch * k * k + ky * k + kx];
                            let mut acc = T::zero();
                            for oy in 0..ho {
                                let iy = oy as isize * s - p + ky as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let row0 = base_in + iy as usize * w;
                                for ox in 0..wo {
                                    let ix = ox as isize * s - p + kx as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let gv = go[oy * wo + ox];
                                    acc = acc + gv * x[row0 + ix as usize];
                                    if let Some(dx) = dx.as_mut() {
                                        let idx = row0 + ix as usize;
                                        dx[idx] = dx[idx] + gv * kv;
                                    }
                                }
                            }
                            if let Some(dw) = dw.as_mut() {
                                let idx = ch * k * k + ky * k + kx;
                                dw[idx] = dw[idx] + acc;
                            }
                        }
                    }
                }
            }
            vec![dx, dw]
        },
    ))
}

/// Depthwise 3×3 (padding 1, given stride) followed by a pointwise 1×1 conv.
pub fn depthwise_separable_conv<T: Element>(
    input: &Tensor<T>,
    dw_weight: &Tensor<T>,
    pw_weight: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (_, c, _, _) = input.dims4()?;
    let (pw_out, pw_in, pk, _) = pw_weight.dims4()?;
    if pw_in != c || pk != 1 {
        return Err(shape_err!(
            "separable conv: pointwise weight {:?} does not accept {c} channels from the depthwise stage",
            pw_weight.shape()
        ));
    }
    let _ = pw_out;
    let pad = dw_weight.shape().get(2).map(|k| k / 2).unwrap_or(0);
    let mid = depthwise_conv2d(input, dw_weight, stride, pad)?;
    conv2d(&mid, pw_weight, None, 1, 0)
}

/// Weight count of a depthwise-separable layer with a 3×3 depthwise stage.
pub fn separable_param_count(c_in: usize, c_out: usize) -> usize {
    9 * c_in + c_in * c_out
}

pub fn conv_param_count(c_in: usize, c_out: usize, k: usize) -> usize {
    c_in * c_out * k * k
}
