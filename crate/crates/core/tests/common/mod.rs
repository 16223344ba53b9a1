//! Naive reference implementations shared by the integration suites.
#![allow(dead_code)]

pub mod gradcheck;
pub mod stain_model;

use mitoseg::ndcore::Tensor;
use mitoseg::nn::Conv;
use mitoseg::segnet::{Cbam, ConvGru, Csag, GruRoles};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense N×C×H×W array.
#[derive(Debug, Clone, PartialEq)]
pub struct Nd {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Nd {
    pub fn of(t: &Tensor<f64>) -> Nd {
        let (n, c, h, w) = t.dims4().unwrap();
        Nd { n, c, h, w, v: t.to_vec() }
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Nd {
        Nd { n, c, h, w, v: vec![0.0; n * c * h * w] }
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.v[((n * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, val: f64) {
        let (cc, hh, ww) = (self.c, self.h, self.w);
        self.v[((n * cc + c) * hh + y) * ww + x] = val;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Nd {
        Nd { v: self.v.iter().map(|&x| f(x)).collect(), ..self.clone() }
    }

    /// Elementwise combination, broadcasting size-1 axes of `o`.
    pub fn zip(&self, o: &Nd, f: impl Fn(f64, f64) -> f64) -> Nd {
        let mut out = self.clone();
        for n in 0..self.n {
            for c in 0..self.c {
                for y in 0..self.h {
                    for x in 0..self.w {
                        let b = o.at(
                            if o.n == 1 { 0 } else { n },
                            if o.c == 1 { 0 } else { c },
                            if o.h == 1 { 0 } else { y },
                            if o.w == 1 { 0 } else { x },
                        );
                        out.set(n, c, y, x, f(self.at(n, c, y, x), b));
                    }
                }
            }
        }
        out
    }
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn random_nd(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Nd {
    Nd { n, c, h, w, v: (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect() }
}

pub fn tensor(a: &Nd) -> Tensor<f64> {
    Tensor::from_vec(a.v.clone(), &[a.n, a.c, a.h, a.w]).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct six-loop convolution with zero padding.
pub fn conv_naive(x: &Nd, w: &Nd, bias: Option<&[f64]>, stride: usize, pad: usize) -> Nd {
    let k = w.h;
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut out = Nd::zeros(x.n, w.n, oh, ow);
    for n in 0..x.n {
        for o in 0..w.n {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for c in 0..x.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                acc += x.at(n, c, iy as usize, ix as usize) * w.at(o, c, ky, kx);
                            }
                        }
                    }
                    out.set(n, o, y, xx, acc);
                }
            }
        }
    }
    out
}

pub fn conv_layer(c: &Conv<f64>, x: &Nd) -> Nd {
    let b = c.bias.as_ref().map(|b| b.to_vec());
    conv_naive(x, &Nd::of(&c.weight), b.as_deref(), c.stride, c.pad)
}

/// Per-channel mean and max over the spatial extent, as N×C×1×1.
pub fn global_pools(f: &Nd) -> (Nd, Nd) {
    let mut avg = Nd::zeros(f.n, f.c, 1, 1);
    let mut mx = Nd::zeros(f.n, f.c, 1, 1);
    for n in 0..f.n {
        for c in 0..f.c {
            let vals: Vec<f64> = (0..f.h).flat_map(|y| (0..f.w).map(move |x| (y, x))).map(|(y, x)| f.at(n, c, y, x)).collect();
            avg.set(n, c, 0, 0, vals.iter().sum::<f64>() / vals.len() as f64);
            mx.set(n, c, 0, 0, vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
    }
    (avg, mx)
}

/// σ(MLP(avg) + MLP(max)).
pub fn channel_attention(cb: &Cbam<f64>, f: &Nd) -> Nd {
    let (a, m) = global_pools(f);
    let mlp = |x: &Nd| conv_layer(&cb.fc2, &conv_layer(&cb.fc1, x).map(|v| v.max(0.0)));
    mlp(&a).zip(&mlp(&m), |p, q| sig(p + q))
}

/// σ(conv7([mean_c ; max_c])).
pub fn spatial_attention(cb: &Cbam<f64>, f: &Nd) -> Nd {
    let mut d = Nd::zeros(f.n, 2, f.h, f.w);
    for n in 0..f.n {
        for y in 0..f.h {
            for x in 0..f.w {
                let vals: Vec<f64> = (0..f.c).map(|c| f.at(n, c, y, x)).collect();
                d.set(n, 0, y, x, vals.iter().sum::<f64>() / f.c as f64);
                d.set(n, 1, y, x, vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
    conv_layer(&cb.spatial, &d).map(sig)
}

pub fn gru_step(g: &ConvGru<f64>, x: &Nd, h: &Nd) -> Nd {
    let add = |a: &Nd, b: &Nd| a.zip(b, |p, q| p + q);
    let z = add(&conv_layer(&g.wz, x), &conv_layer(&g.uz, h)).map(sig);
    let r = add(&conv_layer(&g.wr, x), &conv_layer(&g.ur, h)).map(sig);
    let rh = r.zip(h, |p, q| p * q);
    let cand = add(&conv_layer(&g.wh, x), &conv_layer(&g.uh, &rh)).map(f64::tanh);
    let mut out = h.clone();
    for i in 0..out.v.len() {
        out.v[i] = (1.0 - z.v[i]) * h.v[i] + z.v[i] * cand.v[i];
    }
    out
}

/// Gate composition: attention maps of E and D, GRU fusion of each pair,
/// then `(E + D) ⊙ CF ⊙ SF`.
pub fn csag_oracle(g: &Csag<f64>, e: &Nd, d: &Nd) -> Nd {
    let (ce, cd) = (channel_attention(&g.cbam, e), channel_attention(&g.cbam, d));
    let (se, sd) = (spatial_attention(&g.cbam, e), spatial_attention(&g.cbam, d));
    let (cf, sf) = match g.roles {
        GruRoles::EncoderInput => (gru_step(&g.channel_gru, &ce, &cd), gru_step(&g.spatial_gru, &se, &sd)),
        GruRoles::DecoderInput => (gru_step(&g.channel_gru, &cd, &ce), gru_step(&g.spatial_gru, &sd, &se)),
    };
    e.zip(d, |a, b| a + b).zip(&cf, |a, b| a * b).zip(&sf, |a, b| a * b)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Recursive 8-connected flood fill, components numbered in raster order.
pub fn flood_fill(fg: &[bool], h: usize, w: usize) -> Vec<(usize, f64, f64)> {
    fn fill(fg: &[bool], seen: &mut [bool], h: usize, w: usize, y: usize, x: usize, acc: &mut (usize, f64, f64)) {
        seen[y * w + x] = true;
        acc.0 += 1;
        acc.1 += x as f64;
        acc.2 += y as f64;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                    continue;
                }
                let (yy, xx) = (yy as usize, xx as usize);
                if fg[yy * w + xx] && !seen[yy * w + xx] {
                    fill(fg, seen, h, w, yy, xx, acc);
                }
            }
        }
    }
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if fg[y * w + x] && !seen[y * w + x] {
                let mut acc = (0, 0.0, 0.0);
                fill(fg, &mut seen, h, w, y, x, &mut acc);
                out.push((acc.0, acc.1 / acc.0 as f64, acc.2 / acc.0 as f64));
            }
        }
    }
    out
}
