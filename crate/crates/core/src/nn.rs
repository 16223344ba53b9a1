//! Small layer wrappers shared by both networks.

use crate::error::Result;
use crate::ndcore::ops::{batch_norm2d, conv2d, depthwise_conv2d, relu};
use crate::ndcore::{Element, Init, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

#[derive(Debug, Clone)]
pub struct Conv<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Element> Conv<T> {
    /// `k`×`k` convolution with "same" padding.
    pub fn new(
        ps: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = ps.param(
            &format!("{name}.weight"),
            &[c_out, c_in, k, k],
            Init::HeNormal { fan_in: c_in * k * k },
        )?;
        let bias = if bias {
            Some(ps.param(&format!("{name}.bias"), &[c_out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Conv {
            weight,
            bias,
            stride,
            pad: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm<T: Element = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Element> BatchNorm<T> {
    pub fn new(ps: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: ps.param(&format!("{name}.gamma"), &[c], Init::Ones)?,
            beta: ps.param(&format!("{name}.beta"), &[c], Init::Zeros)?,
            running_mean: ps.buffer(&format!("{name}.running_mean"), &[c], 0.0)?,
            running_var: ps.buffer(&format!("{name}.running_var"), &[c], 1.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        batch_norm2d(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            mode.is_train(),
        )
    }
}

/// Depthwise 3×3 + pointwise 1×1. Carries a pointwise bias only when no
/// batchnorm follows.
#[derive(Debug, Clone)]
pub struct SepConv<T: Element = f32> {
    pub depthwise: Tensor<T>,
    pub pointwise: Conv<T>,
    pub stride: usize,
}

impl<T: Element> SepConv<T> {
    pub fn new(ps: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, stride: usize, bias: bool) -> Result<Self> {
        let depthwise = ps.param(&format!("{name}.dw.weight"), &[c_in, 1, 3, 3], Init::HeNormal { fan_in: 9 })?;
        let pointwise = Conv::new(ps, &format!("{name}.pw"), c_in, c_out, 1, 1, bias)?;
        Ok(SepConv {
            depthwise,
            pointwise,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mid = depthwise_conv2d(x, &self.depthwise, self.stride, 1)?;
        self.pointwise.forward(&mid)
    }
}

#[derive(Debug, Clone)]
pub enum ConvKind<T: Element> {
    Plain(Conv<T>),
    Separable(SepConv<T>),
}

/// Convolution (plain or separable) followed by optional batchnorm.
#[derive(Debug, Clone)]
pub struct ConvUnit<T: Element = f32> {
    pub conv: ConvKind<T>,
    pub bn: Option<BatchNorm<T>>,
}

impl<T: Element> ConvUnit<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn plain(
        ps: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        use_bn: bool,
    ) -> Result<Self> {
        let conv = Conv::new(ps, &format!("{name}.conv"), c_in, c_out, k, stride, !use_bn)?;
        let bn = use_bn.then(|| BatchNorm::new(ps, &format!("{name}.bn"), c_out)).transpose()?;
        Ok(ConvUnit {
            conv: ConvKind::Plain(conv),
            bn,
        })
    }

    pub fn separable(
        ps: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        use_bn: bool,
    ) -> Result<Self> {
        let conv = SepConv::new(ps, &format!("{name}.sep"), c_in, c_out, stride, !use_bn)?;
        let bn = use_bn.then(|| BatchNorm::new(ps, &format!("{name}.bn"), c_out)).transpose()?;
        Ok(ConvUnit {
            conv: ConvKind::Separable(conv),
            bn,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = match &self.conv {
            ConvKind::Plain(c) => c.forward(x)?,
            ConvKind::Separable(c) => c.forward(x)?,
        };
        match &self.bn {
            Some(bn) => bn.forward(&y, mode),
            None => Ok(y),
        }
    }

    pub fn forward_relu(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(relu(&self.forward(x, mode)?))
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.conv, ConvKind::Separable(_))
    }

    /// Weight count of the convolution alone (no bias, no batchnorm).
    pub fn conv_weight_count(&self) -> usize {
        match &self.conv {
            ConvKind::Plain(c) => c.weight.numel(),
            ConvKind::Separable(s) => s.depthwise.numel() + s.pointwise.weight.numel(),
        }
    }
}
