//! Convolutional block attention and a single-step convolutional GRU.

use crate::error::{shape_err, Result};
use crate::ndcore::ops::{
    add, affine, channel_avg, channel_max, concat_channels, global_avg_pool, global_max_pool, mul, mul_broadcast,
    relu, sigmoid, tanh,
};
use crate::ndcore::{Element, ParamStore, Tensor};
use crate::nn::Conv;

/// CBAM: a channel branch (shared MLP over average- and max-pooled
/// descriptors) and a spatial branch (7×7 conv over channel mean ∥ max).
#[derive(Debug, Clone)]
pub struct Cbam<T: Element = f32> {
    pub fc1: Conv<T>,
    pub fc2: Conv<T>,
    pub spatial: Conv<T>,
    pub channels: usize,
}

impl<T: Element> Cbam<T> {
    /// Hidden width is `channels / reduction`, at least 1.
    pub fn new(ps: &mut ParamStore<T>, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = (channels / reduction.max(1)).max(1);
        Ok(Cbam {
            fc1: Conv::new(ps, &format!("{name}.mlp1"), channels, hidden, 1, 1, true)?,
            fc2: Conv::new(ps, &format!("{name}.mlp2"), hidden, channels, 1, 1, true)?,
            spatial: Conv::new(ps, &format!("{name}.spatial"), 2, 1, 7, 1, true)?,
            channels,
        })
    }

    pub fn hidden(&self) -> usize {
        self.fc1.weight.shape()[0]
    }

    fn mlp(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc2.forward(&relu(&self.fc1.forward(x)?))
    }

    /// N×C×1×1 map in (0, 1).
    pub fn channel_map(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, _, _) = f.dims4()?;
        if c != self.channels {
            return Err(shape_err!("attention built for {} channels, got {c}", self.channels));
        }
        let a = self.mlp(&global_avg_pool(f)?)?;
        let m = self.mlp(&global_max_pool(f)?)?;
        Ok(sigmoid(&add(&a, &m)?))
    }

    /// N×1×H×W map in (0, 1).
    pub fn spatial_map(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let desc = concat_channels(&[&channel_avg(f)?, &channel_max(f)?])?;
        Ok(sigmoid(&self.spatial.forward(&desc)?))
    }

    /// Both maps computed directly from `f`.
    pub fn maps(&self, f: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((self.channel_map(f)?, self.spatial_map(f)?))
    }

    /// Sequential refinement: channel attention, then spatial attention on the
    /// channel-refined features.
    pub fn attend(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let fc = mul_broadcast(f, &self.channel_map(f)?)?;
        let s = self.spatial_map(&fc)?;
        mul_broadcast(&fc, &s)
    }
}

/// Single-step convolutional GRU cell.
///
/// ```text
/// z  = σ(Wz∗x + Uz∗h)
/// r  = σ(Wr∗x + Ur∗h)
/// h̃  = tanh(W∗x + U∗(r⊙h))
/// out = (1 − z)⊙h + z⊙h̃
/// ```
/// The `W` convolutions carry the biases.
#[derive(Debug, Clone)]
pub struct ConvGru<T: Element = f32> {
    pub wz: Conv<T>,
    pub uz: Conv<T>,
    pub wr: Conv<T>,
    pub ur: Conv<T>,
    pub wh: Conv<T>,
    pub uh: Conv<T>,
}

impl<T: Element> ConvGru<T> {
    pub fn new(ps: &mut ParamStore<T>, name: &str, channels: usize, kernel: usize) -> Result<Self> {
        let mut conv = |gate: &str, bias: bool| {
            Conv::new(ps, &format!("{name}.{gate}"), channels, channels, kernel, 1, bias)
        };
        Ok(ConvGru {
            wz: conv("wz", true)?,
            uz: conv("uz", false)?,
            wr: conv("wr", true)?,
            ur: conv("ur", false)?,
            wh: conv("wh", true)?,
            uh: conv("uh", false)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != h.shape() {
            return Err(shape_err!(
                "gru input {:?} and hidden state {:?} differ",
                x.shape(),
                h.shape()
            ));
        }
        let z = sigmoid(&add(&self.wz.forward(x)?, &self.uz.forward(h)?)?);
        let r = sigmoid(&add(&self.wr.forward(x)?, &self.ur.forward(h)?)?);
        let cand = tanh(&add(&self.wh.forward(x)?, &self.uh.forward(&mul(&r, h)?)?)?);
        // (1 − z)⊙h + z⊙h̃
        let keep = mul(&affine(&z, -1.0, 1.0), h)?;
        let update = mul(&z, &cand)?;
        add(&keep, &update)
    }
}
