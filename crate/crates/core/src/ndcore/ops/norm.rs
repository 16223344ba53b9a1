use crate::error::{shape_err, Result};
use crate::ndcore::element::Element;
use crate::ndcore::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization of an N×C×H×W tensor.
///
/// In training mode the batch moments normalize the input and the running
/// buffers are updated in place (biased variance for normalization, unbiased
/// for the running estimate). In eval mode the running buffers are used and
/// left untouched.
pub fn batch_norm2d<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    training: bool,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    for (name, t) in [("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)] {
        if t.shape() != [c] {
            return Err(shape_err!("batchnorm {name} shape {:?} does not match {c} channels", t.shape()));
        }
    }
    let hw = h * w;
    let m = n * hw;
    let eps = T::lit(BN_EPS);
    let xv = x.data();

    let (mean, var) = if training {
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let inv_m = T::lit(1.0 / m as f64);
        for ch in 0..c {
            let mut s = T::zero();
            for b in 0..n {
                s = s + xv[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
            }
            let mu = s * inv_m;
            let mut ss = T::zero();
            for b in 0..n {
                for &v in &xv[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                    ss = ss + (v - mu) * (v - mu);
                }
            }
            mean[ch] = mu;
            var[ch] = ss * inv_m;
        }
        let mom = T::lit(BN_MOMENTUM);
        let unbias = if m > 1 { T::lit(m as f64 / (m - 1) as f64) } else { T::one() };
        {
            let mut rm = running_mean.data_mut();
            let mut rv = running_var.data_mut();
            for ch in 0..c {
                rm[ch] = (T::one() - mom) * rm[ch] + mom * mean[ch];
                rv[ch] = (T::one() - mom) * rv[ch] + mom * var[ch] * unbias;
            }
        }
        (mean, var)
    } else {
        (running_mean.to_vec(), running_var.to_vec())
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let gv = gamma.to_vec();
    let bv = beta.to_vec();
    let mut xhat = vec![T::zero(); xv.len()];
    let mut out = vec![T::zero(); xv.len()];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for i in r {
                let xh = (xv[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = gv[ch] * xh + bv[ch];
            }
        }
    }
    drop(xv);

    Ok(Tensor::from_op(
        out,
        vec![n, c, h, w],
        "batch_norm2d",
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g, needs| {
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                        dgamma[ch] = dgamma[ch] + g[i] * xhat[i];
                        dbeta[ch] = dbeta[ch] + g[i];
                    }
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); n * c * hw];
                let mt = T::lit(m as f64);
                for ch in 0..c {
                    let scale = gv[ch] * inv_std[ch];
                    if training {
                        // sums of dxhat and dxhat·xhat are gamma·dbeta and gamma·dgamma
                        let s1 = dbeta[ch];
                        let s2 = dgamma[ch];
                        for b in 0..n {
                            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                                dx[i] = scale * (mt * g[i] - s1 - xhat[i] * s2) / mt;
                            }
                        }
                    } else {
                        for b in 0..n {
                            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                                dx[i] = scale * g[i];
                            }
                        }
                    }
                }
                dx
            });
            vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
        },
    ))
}
