//! Elementwise activations, broadcasting arithmetic, concatenation, linear
//! layers and scalar reductions.

use crate::error::{shape_err, Result};
use crate::ndcore::element::{matmul_acc, matmul_at_acc, matmul_bt_acc, Element};
use crate::ndcore::Tensor;

fn unary<T: Element>(
    x: &Tensor<T>,
    name: &'static str,
    f: impl Fn(T) -> T,
    // derivative expressed through input and output
    df: impl Fn(T, T) -> T + Send + Sync + 'static,
) -> Tensor<T> {
    let out: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    let saved_out = out.clone();
    let xin = x.clone();
    Tensor::from_op(out, x.shape().to_vec(), name, vec![x.clone()], move |g, _| {
        let xv = xin.data();
        vec![Some(
            g.iter()
                .zip(xv.iter())
                .zip(&saved_out)
                .map(|((&gv, &xv), &yv)| gv * df(xv, yv))
                .collect(),
        )]
    })
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    unary(
        x,
        "relu",
        |v| if v > T::zero() { v } else { T::zero() },
        |xv, _| if xv > T::zero() { T::one() } else { T::zero() },
    )
}

/// Logistic function, evaluated in the stable branch for each sign so the
/// output never reaches exactly 0.
pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, "sigmoid", sigmoid_scalar, |_, y| y * (T::one() - y))
}

#[inline]
pub fn sigmoid_scalar<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn tanh<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, "tanh", |v| v.tanh(), |_, y| T::one() - y * y)
}

/// `a·x + b` with scalar constants.
pub fn affine<T: Element>(x: &Tensor<T>, a: f64, b: f64) -> Tensor<T> {
    let (ta, tb) = (T::lit(a), T::lit(b));
    unary(x, "affine", move |v| ta * v + tb, move |_, _| ta)
}

/// Strides of `small` viewed inside `full`'s index space (0 on broadcast axes).
fn broadcast_strides(full: &[usize], small: &[usize]) -> Result<Vec<usize>> {
    if full.len() != small.len() {
        return Err(shape_err!("cannot broadcast {small:?} against {full:?}"));
    }
    let mut strides = vec![0; full.len()];
    let mut acc = 1;
    for i in (0..full.len()).rev() {
        if small[i] == full[i] {
            strides[i] = acc;
        } else if small[i] != 1 {
            return Err(shape_err!("cannot broadcast {small:?} against {full:?}"));
        }
        acc *= small[i];
    }
    Ok(strides)
}

/// Flat index into the broadcast operand for every element of the full shape.
fn broadcast_index(full: &[usize], strides: &[usize]) -> Vec<usize> {
    let n: usize = full.iter().product();
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; full.len()];
    for _ in 0..n {
        idx.push(counter.iter().zip(strides).map(|(c, s)| c * s).sum());
        for d in (0..full.len()).rev() {
            counter[d] += 1;
            if counter[d] < full[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    idx
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

fn binary<T: Element>(x: &Tensor<T>, y: &Tensor<T>, op: BinOp, name: &'static str) -> Result<Tensor<T>> {
    let full = x.shape().to_vec();
    let same = y.shape() == x.shape();
    let map = if same {
        None
    } else {
        let strides = broadcast_strides(&full, y.shape())?;
        Some(broadcast_index(&full, &strides))
    };
    let out: Vec<T> = {
        let (xv, yv) = (x.data(), y.data());
        let at = |i: usize| match &map {
            None => yv[i],
            Some(m) => yv[m[i]],
        };
        (0..xv.len())
            .map(|i| match op {
                BinOp::Add => xv[i] + at(i),
                BinOp::Sub => xv[i] - at(i),
                BinOp::Mul => xv[i] * at(i),
            })
            .collect()
    };
    let (xc, yc) = (x.clone(), y.clone());
    let ylen = y.numel();
    Ok(Tensor::from_op(out, full, name, vec![x.clone(), y.clone()], move |g, needs| {
        let yi = |i: usize| match &map {
            None => i,
            Some(m) => m[i],
        };
        let dx = needs[0].then(|| match op {
            BinOp::Add | BinOp::Sub => g.to_vec(),
            BinOp::Mul => {
                let yv = yc.data();
                g.iter().enumerate().map(|(i, &gv)| gv * yv[yi(i)]).collect()
            }
        });
        let dy = needs[1].then(|| {
            let mut dy = vec![T::zero(); ylen];
            match op {
                BinOp::Add => g.iter().enumerate().for_each(|(i, &gv)| dy[yi(i)] = dy[yi(i)] + gv),
                BinOp::Sub => g.iter().enumerate().for_each(|(i, &gv)| dy[yi(i)] = dy[yi(i)] - gv),
                BinOp::Mul => {
                    let xv = xc.data();
                    g.iter()
                        .enumerate()
                        .for_each(|(i, &gv)| dy[yi(i)] = dy[yi(i)] + gv * xv[i]);
                }
            }
            dy
        });
        vec![dx, dy]
    }))
}

/// `x + y`; `y` may broadcast along any axis where its extent is 1.
pub fn add<T: Element>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    binary(x, y, BinOp::Add, "add")
}

pub fn sub<T: Element>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    binary(x, y, BinOp::Sub, "sub")
}

/// Elementwise product; `y` may be N×C×1×1 or N×1×H×W against N×C×H×W.
pub fn mul_broadcast<T: Element>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    binary(x, y, BinOp::Mul, "mul")
}

pub fn mul<T: Element>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    binary(x, y, BinOp::Mul, "mul")
}

/// Concatenate N×C_i×H×W tensors along channels.
pub fn concat_channels<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| shape_err!("concat of zero tensors"))?;
    let (n, _, h, w) = first.dims4()?;
    let mut chans = Vec::with_capacity(parts.len());
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(shape_err!(
                "concat: {:?} incompatible with {:?}",
                p.shape(),
                first.shape()
            ));
        }
        chans.push(pc);
    }
    let total: usize = chans.iter().sum();
    let hw = h * w;
    let mut out = vec![T::zero(); n * total * hw];
    for b in 0..n {
        let mut off = 0;
        for (p, &c) in parts.iter().zip(&chans) {
            let src = &p.data()[b * c * hw..(b + 1) * c * hw];
            out[(b * total + off) * hw..(b * total + off + c) * hw].copy_from_slice(src);
            off += c;
        }
    }
    let parents: Vec<Tensor<T>> = parts.iter().map(|&p| p.clone()).collect();
    Ok(Tensor::from_op(out, vec![n, total, h, w], "concat", parents, move |g, needs| {
        let mut res = Vec::with_capacity(chans.len());
        let mut off = 0;
        for (&c, &need) in chans.iter().zip(needs) {
            if need {
                let mut d = Vec::with_capacity(n * c * hw);
                for b in 0..n {
                    d.extend_from_slice(&g[(b * total + off) * hw..(b * total + off + c) * hw]);
                }
                res.push(Some(d));
            } else {
                res.push(None);
            }
            off += c;
        }
        res
    }))
}

/// `x` N×F (any trailing shape is flattened), `weight` O×F, `bias` O → N×O.
pub fn linear<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let n = x.shape()[0];
    let f = x.numel() / n;
    let (o, wf) = match weight.shape() {
        [o, wf] => (*o, *wf),
        s => return Err(shape_err!("linear weight must be O×F, got {s:?}")),
    };
    if wf != f {
        return Err(shape_err!("linear: weight expects {wf} features, input {:?} has {f}", x.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(shape_err!("linear bias {:?} does not match {o} outputs", b.shape()));
        }
    }
    let mut out = vec![T::zero(); n * o];
    matmul_bt_acc(n, f, o, &x.data(), &weight.data(), &mut out, false);
    if let Some(b) = bias {
        let bv = b.data();
        for row in out.chunks_mut(o) {
            row.iter_mut().zip(bv.iter()).for_each(|(v, &bb)| *v = *v + bb);
        }
    }
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (xc, wc) = (x.clone(), weight.clone());
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(out, vec![n, o], "linear", parents, move |g, needs| {
        let dx = needs[0].then(|| {
            let mut d = vec![T::zero(); n * f];
            matmul_acc(n, o, f, g, &wc.data(), &mut d, false);
            d
        });
        let dw = needs[1].then(|| {
            let mut d = vec![T::zero(); o * f];
            matmul_at_acc(o, n, f, g, &xc.data(), &mut d, false);
            d
        });
        let mut res = vec![dx, dw];
        if has_bias {
            res.push(needs[2].then(|| {
                let mut d = vec![T::zero(); o];
                for row in g.chunks(o) {
                    d.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                }
                d
            }));
        }
        res
    }))
}

pub fn sum<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.data().iter().copied().sum::<T>();
    let n = x.numel();
    Tensor::from_op(vec![s], vec![1], "sum", vec![x.clone()], move |g, _| vec![Some(vec![g[0]; n])])
}

pub fn mean<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.numel();
    let inv = T::lit(1.0 / n as f64);
    let s = x.data().iter().copied().sum::<T>() * inv;
    Tensor::from_op(vec![s], vec![1], "mean", vec![x.clone()], move |g, _| vec![Some(vec![g[0] * inv; n])])
}

/// Weighted sum of scalar tensors.
pub fn weighted_sum<T: Element>(terms: &[(&Tensor<T>, f64)]) -> Result<Tensor<T>> {
    let mut s = T::zero();
    for (t, wgt) in terms {
        if t.numel() != 1 {
            return Err(shape_err!("weighted_sum expects scalars, got {:?}", t.shape()));
        }
        s = s + t.item() * T::lit(*wgt);
    }
    let weights: Vec<T> = terms.iter().map(|(_, w)| T::lit(*w)).collect();
    let parents = terms.iter().map(|(t, _)| (*t).clone()).collect();
    Ok(Tensor::from_op(vec![s], vec![1], "weighted_sum", parents, move |g, _| {
        weights.iter().map(|&w| Some(vec![g[0] * w])).collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::<f32>::from_vec(vec![-1.0, 0.0, 2.0], &[3]).unwrap();
        assert_eq!(relu(&x).to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_of_zero_and_open_range() {
        let x = Tensor::<f32>::from_vec(vec![0.0, -80.0, 80.0, -20.0], &[4]).unwrap();
        let y = sigmoid(&x).to_vec();
        assert_eq!(y[0], 0.5);
        assert!(y[1] > 0.0);
        assert!(y[3] > 0.0 && y[3] < 1.0);
    }

    #[test]
    fn broadcast_shapes() {
        let x = Tensor::<f32>::full(&[1, 3, 2, 2], 2.0);
        let c = Tensor::from_vec(vec![1.0, 2.0, 3.0], &[1, 3, 1, 1]).unwrap();
        let s = Tensor::from_vec(vec![1.0, 0.0, 0.5, 1.0], &[1, 1, 2, 2]).unwrap();
        let y = mul_broadcast(&x, &c).unwrap().to_vec();
        assert_eq!(&y[4..8], &[4.0; 4]);
        let y = mul_broadcast(&x, &s).unwrap().to_vec();
        assert_eq!(&y[8..12], &[2.0, 0.0, 1.0, 2.0]);
        let bad = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        assert!(mul_broadcast(&x, &bad).is_err());
    }

    #[test]
    fn sum_and_half_square_gradients() {
        let w = Tensor::<f64>::parameter(vec![0.5, -1.5, 2.0], &[3]).unwrap();
        sum(&w).backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0; 3]);

        let w = Tensor::<f64>::parameter(vec![0.5, -1.5, 2.0], &[3]).unwrap();
        let sq = mul(&w, &w).unwrap();
        affine(&sum(&sq), 0.5, 0.0).backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::<f64>::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let loss = sum(&w);
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 2.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }
}
