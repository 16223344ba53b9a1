//! Encoder building blocks.

use crate::error::{Error, Result};
use crate::ndcore::ops::{add, relu};
use crate::ndcore::{Element, ParamStore, Tensor};
use crate::nn::{ConvUnit, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DscrbKind {
    /// Downsampling: plain stride-2 3×3, then a separable layer; 1×1 stride-2
    /// projection on the shortcut.
    A,
    /// Extent-preserving: two separable layers; identity shortcut, or a 1×1
    /// projection when the widths differ.
    B,
}

/// Depthwise-separable residual block.
#[derive(Debug, Clone)]
pub struct Dscrb<T: Element = f32> {
    pub kind: DscrbKind,
    pub first: ConvUnit<T>,
    pub second: ConvUnit<T>,
    pub shortcut: Option<ConvUnit<T>>,
}

impl<T: Element> Dscrb<T> {
    pub fn new(
        ps: &mut ParamStore<T>,
        name: &str,
        kind: DscrbKind,
        c_in: usize,
        c_out: usize,
        use_bn: bool,
    ) -> Result<Self> {
        if c_in == 0 || c_out == 0 {
            return Err(Error::Config(format!("{name}: channel counts must be positive")));
        }
        let (first, second, shortcut) = match kind {
            DscrbKind::A => (
                ConvUnit::plain(ps, &format!("{name}.conv1"), c_in, c_out, 3, 2, use_bn)?,
                ConvUnit::separable(ps, &format!("{name}.conv2"), c_out, c_out, 1, use_bn)?,
                Some(ConvUnit::plain(ps, &format!("{name}.shortcut"), c_in, c_out, 1, 2, use_bn)?),
            ),
            DscrbKind::B => (
                ConvUnit::separable(ps, &format!("{name}.conv1"), c_in, c_out, 1, use_bn)?,
                ConvUnit::separable(ps, &format!("{name}.conv2"), c_out, c_out, 1, use_bn)?,
                if c_in == c_out {
                    None
                } else {
                    Some(ConvUnit::plain(ps, &format!("{name}.shortcut"), c_in, c_out, 1, 1, use_bn)?)
                },
            ),
        };
        Ok(Dscrb {
            kind,
            first,
            second,
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = self.first.forward_relu(x, mode)?;
        let h = self.second.forward(&h, mode)?;
        let s = match &self.shortcut {
            Some(sc) => sc.forward(x, mode)?,
            None => x.clone(),
        };
        Ok(relu(&add(&h, &s)?))
    }

    pub fn units(&self) -> Vec<&ConvUnit<T>> {
        let mut v = vec![&self.first, &self.second];
        v.extend(self.shortcut.as_ref());
        v
    }
}

/// One encoder level below the first.
#[derive(Debug, Clone)]
pub enum EncoderLevel<T: Element = f32> {
    Residual(Dscrb<T>, Dscrb<T>),
    Plain(Vec<ConvUnit<T>>),
}

impl<T: Element> EncoderLevel<T> {
    pub fn residual(ps: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, use_bn: bool) -> Result<Self> {
        Ok(EncoderLevel::Residual(
            Dscrb::new(ps, &format!("{name}.a"), DscrbKind::A, c_in, c_out, use_bn)?,
            Dscrb::new(ps, &format!("{name}.b"), DscrbKind::B, c_out, c_out, use_bn)?,
        ))
    }

    /// Same layer positions as the residual level, all plain 3×3.
    pub fn plain(ps: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, use_bn: bool) -> Result<Self> {
        let mut units = vec![ConvUnit::plain(ps, &format!("{name}.conv1"), c_in, c_out, 3, 2, use_bn)?];
        for i in 2..=4 {
            units.push(ConvUnit::plain(ps, &format!("{name}.conv{i}"), c_out, c_out, 3, 1, use_bn)?);
        }
        Ok(EncoderLevel::Plain(units))
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            EncoderLevel::Residual(a, b) => b.forward(&a.forward(x, mode)?, mode),
            EncoderLevel::Plain(units) => {
                let mut h = x.clone();
                for u in units {
                    h = u.forward_relu(&h, mode)?;
                }
                Ok(h)
            }
        }
    }

    /// Convolution layers in main-path order (shortcuts excluded).
    pub fn main_path_units(&self) -> Vec<&ConvUnit<T>> {
        match self {
            EncoderLevel::Residual(a, b) => vec![&a.first, &a.second, &b.first, &b.second],
            EncoderLevel::Plain(units) => units.iter().collect(),
        }
    }
}
