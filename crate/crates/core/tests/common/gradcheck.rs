//! Central-difference gradient checks over every differentiable operator.

use mitoseg::losses::{bce_loss, combined_loss, tversky_loss, CombinedWeights, TverskyParams};
use mitoseg::ndcore::ops::*;
use mitoseg::ndcore::{NoGradGuard, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradient components below this magnitude are compared absolutely.
pub const FLOOR: f64 = 1e-3;
pub const INSTANCES: usize = 20;

type Forward = Box<dyn Fn(&[Tensor<f64>]) -> Tensor<f64>>;

pub struct Instance {
    pub inputs: Vec<Tensor<f64>>,
    pub forward: Forward,
}

pub struct OpCase {
    pub name: &'static str,
    pub build: fn(&mut ChaCha8Rng) -> Instance,
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::parameter((0..n).map(|_| r.random_range(-1.0..1.0)).collect(), shape).unwrap()
}

/// Values at least 1/n apart so no perturbation changes an argmax.
fn distinct(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64 + r.random_range(0.0..0.5 / n as f64)).collect();
    v.shuffle(r);
    Tensor::parameter(v, shape).unwrap()
}

/// Values kept away from zero.
fn off_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let t = uniform(r, shape);
    t.data_mut().iter_mut().for_each(|v| *v = v.signum() * (0.01 + v.abs()));
    t
}

fn probs(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::parameter((0..n).map(|_| r.random_range(0.05..0.95)).collect(), shape).unwrap()
}

fn mask(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut m: Vec<f64> = (0..n).map(|_| if r.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
    m[0] = 1.0;
    m
}

fn dims(r: &mut ChaCha8Rng) -> [usize; 4] {
    [r.random_range(1..3), r.random_range(1..4), r.random_range(3..7), r.random_range(3..7)]
}

fn shaped(r: &mut ChaCha8Rng, f: fn(&mut ChaCha8Rng, &[usize]) -> Tensor<f64>) -> Tensor<f64> {
    let d = dims(r);
    f(r, &d)
}

fn inst(inputs: Vec<Tensor<f64>>, forward: impl Fn(&[Tensor<f64>]) -> Tensor<f64> + 'static) -> Instance {
    Instance {
        inputs,
        forward: Box::new(forward),
    }
}

macro_rules! case {
    ($name:expr, |$r:ident| $body:expr) => {
        OpCase {
            name: $name,
            build: |$r: &mut ChaCha8Rng| $body,
        }
    };
}

pub fn catalog() -> Vec<OpCase> {
    vec![
        case!("conv2d", |r| {
            let [n, ci, h, w] = dims(r);
            let co = r.random_range(1..4);
            let k = [1, 3][r.random_range(0..2)];
            let (stride, pad) = (r.random_range(1..3), r.random_range(0..2));
            let bias = r.random_bool(0.5);
            let mut inputs = vec![uniform(r, &[n, ci, h + 1, w + 1]), uniform(r, &[co, ci, k, k])];
            if bias {
                inputs.push(uniform(r, &[co]));
            }
            inst(inputs, move |t| conv2d(&t[0], &t[1], t.get(2), stride, pad).unwrap())
        }),
        case!("depthwise_conv2d", |r| {
            let [n, c, h, w] = dims(r);
            let stride = r.random_range(1..3);
            inst(vec![uniform(r, &[n, c, h, w]), uniform(r, &[c, 1, 3, 3])], move |t| {
                depthwise_conv2d(&t[0], &t[1], stride, 1).unwrap()
            })
        }),
        case!("depthwise_separable_conv", |r| {
            let [n, c, h, w] = dims(r);
            let co = r.random_range(1..4);
            let stride = r.random_range(1..3);
            inst(
                vec![uniform(r, &[n, c, h, w]), uniform(r, &[c, 1, 3, 3]), uniform(r, &[co, c, 1, 1])],
                move |t| depthwise_separable_conv(&t[0], &t[1], &t[2], stride).unwrap(),
            )
        }),
        case!("batch_norm2d_train", |r| {
            let [_, c, h, w] = dims(r);
            let n = r.random_range(2..4);
            let rm = Tensor::zeros(&[c]);
            let rv = Tensor::full(&[c], 1.0);
            inst(
                vec![uniform(r, &[n, c, h, w]), uniform(r, &[c]), uniform(r, &[c])],
                move |t| batch_norm2d(&t[0], &t[1], &t[2], &rm, &rv, true).unwrap(),
            )
        }),
        case!("batch_norm2d_eval", |r| {
            let [n, c, h, w] = dims(r);
            let rm = uniform(r, &[c]).detach();
            let rv = Tensor::from_vec((0..c).map(|_| r.random_range(0.2..2.0)).collect(), &[c]).unwrap();
            inst(
                vec![uniform(r, &[n, c, h, w]), uniform(r, &[c]), uniform(r, &[c])],
                move |t| batch_norm2d(&t[0], &t[1], &t[2], &rm, &rv, false).unwrap(),
            )
        }),
        case!("relu", |r| inst(vec![shaped(r, off_zero)], |t| relu(&t[0]))),
        case!("sigmoid", |r| inst(vec![shaped(r, uniform)], |t| sigmoid(&t[0]))),
        case!("tanh", |r| inst(vec![shaped(r, uniform)], |t| tanh(&t[0]))),
        case!("affine", |r| {
            let (a, b) = (r.random_range(-2.0..2.0), r.random_range(-1.0..1.0));
            inst(vec![shaped(r, uniform)], move |t| affine(&t[0], a, b))
        }),
        case!("add", |r| {
            let d = dims(r);
            let other = if r.random_bool(0.5) { d } else { [d[0], d[1], 1, 1] };
            inst(vec![uniform(r, &d), uniform(r, &other)], |t| add(&t[0], &t[1]).unwrap())
        }),
        case!("sub", |r| {
            let d = dims(r);
            let other = if r.random_bool(0.5) { d } else { [d[0], 1, d[2], d[3]] };
            inst(vec![uniform(r, &d), uniform(r, &other)], |t| sub(&t[0], &t[1]).unwrap())
        }),
        case!("mul", |r| {
            let d = dims(r);
            inst(vec![uniform(r, &d), uniform(r, &d)], |t| mul(&t[0], &t[1]).unwrap())
        }),
        case!("mul_broadcast", |r| {
            let d = dims(r);
            let other = if r.random_bool(0.5) { [d[0], d[1], 1, 1] } else { [d[0], 1, d[2], d[3]] };
            inst(vec![uniform(r, &d), uniform(r, &other)], |t| mul_broadcast(&t[0], &t[1]).unwrap())
        }),
        case!("concat_channels", |r| {
            let [n, _, h, w] = dims(r);
            let parts = r.random_range(2..4);
            let inputs = (0..parts).map(|_| {
                let c = r.random_range(1..4);
                uniform(r, &[n, c, h, w])
            });
            inst(inputs.collect(), |t| concat_channels(&t.iter().collect::<Vec<_>>()).unwrap())
        }),
        case!("linear", |r| {
            let [n, c, h, w] = dims(r);
            let o = r.random_range(1..5);
            let mut inputs = vec![uniform(r, &[n, c, h, w]), uniform(r, &[o, c * h * w])];
            if r.random_bool(0.5) {
                inputs.push(uniform(r, &[o]));
            }
            inst(inputs, |t| linear(&t[0], &t[1], t.get(2)).unwrap())
        }),
        case!("sum", |r| inst(vec![shaped(r, uniform)], |t| sum(&t[0]))),
        case!("mean", |r| inst(vec![shaped(r, uniform)], |t| mean(&t[0]))),
        case!("weighted_sum", |r| {
            let (a, b) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
            inst(vec![uniform(r, &[1]), uniform(r, &[1]), uniform(r, &[1])], move |t| {
                weighted_sum(&[(&t[0], a), (&t[1], b), (&t[2], 1.0)]).unwrap()
            })
        }),
        case!("global_avg_pool", |r| inst(vec![shaped(r, uniform)], |t| global_avg_pool(&t[0]).unwrap())),
        case!("global_max_pool", |r| inst(vec![shaped(r, distinct)], |t| global_max_pool(&t[0]).unwrap())),
        case!("channel_avg", |r| inst(vec![shaped(r, uniform)], |t| channel_avg(&t[0]).unwrap())),
        case!("channel_max", |r| inst(vec![shaped(r, distinct)], |t| channel_max(&t[0]).unwrap())),
        case!("avg_pool2x", |r| {
            let [n, c, h, w] = dims(r);
            inst(vec![uniform(r, &[n, c, 2 * h, 2 * w])], |t| avg_pool2x(&t[0]).unwrap())
        }),
        case!("max_pool2d", |r| {
            let d = dims(r);
            let (k, stride, pad) = (r.random_range(2..4), r.random_range(1..3), r.random_range(0..2));
            inst(vec![distinct(r, &d)], move |t| max_pool2d(&t[0], k, stride, pad).unwrap())
        }),
        case!("bilinear_resize", |r| {
            let d = dims(r);
            let (oh, ow) = (r.random_range(2..10), r.random_range(2..10));
            inst(vec![uniform(r, &d)], move |t| bilinear_resize(&t[0], oh, ow).unwrap())
        }),
        case!("bilinear_upsample_2x", |r| {
            inst(vec![shaped(r, uniform)], |t| bilinear_upsample_2x(&t[0]).unwrap())
        }),
        case!("reshape", |r| {
            let [n, c, h, w] = dims(r);
            inst(vec![uniform(r, &[n, c, h, w])], move |t| t[0].reshape(&[n * c, h * w]).unwrap())
        }),
        case!("bce_loss", |r| {
            let d = dims(r);
            let m = mask(r, d.iter().product());
            inst(vec![probs(r, &d)], move |t| bce_loss(&t[0], &m).unwrap())
        }),
        case!("tversky_loss", |r| {
            let d = dims(r);
            let m = mask(r, d.iter().product());
            let p = TverskyParams {
                alpha: r.random_range(0.0..1.0),
                beta: r.random_range(0.0..1.0),
                smooth: r.random_range(0.0..1.0),
            };
            inst(vec![probs(r, &d)], move |t| tversky_loss(&t[0], &m, p).unwrap())
        }),
        case!("combined_loss", |r| {
            let d = dims(r);
            let m = mask(r, d.iter().product());
            inst(vec![probs(r, &d)], move |t| {
                combined_loss(&t[0], &m, TverskyParams::default(), CombinedWeights::default()).unwrap()
            })
        }),
    ]
}

/// Worst relative error between the analytic gradient and central
/// differences of `Σ out·w` for a random fixed `w`.
pub fn check(instance: &Instance, r: &mut ChaCha8Rng) -> f64 {
    let Instance { inputs, forward } = instance;
    let probe = forward(inputs);
    let wts = Tensor::from_vec((0..probe.numel()).map(|_| r.random_range(-1.0..1.0)).collect(), probe.shape()).unwrap();
    let objective = || sum(&mul(&forward(inputs), &wts).unwrap());
    objective().backward().unwrap();
    let _g = NoGradGuard::new();
    let mut worst = 0.0f64;
    for x in inputs {
        let grad = x.grad().expect("input received a gradient");
        for i in 0..x.numel() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + STEP;
            let up = objective().item();
            x.data_mut()[i] = orig - STEP;
            let down = objective().item();
            x.data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * STEP);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

/// `(operator, worst relative error over all instances)` for every case.
pub fn run_catalog(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    catalog()
        .into_iter()
        .enumerate()
        .map(|(k, case)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed ^ (k as u64) << 8);
            let worst = (0..instances).map(|_| check(&(case.build)(&mut r), &mut r)).fold(0.0, f64::max);
            (case.name, worst)
        })
        .collect()
}
