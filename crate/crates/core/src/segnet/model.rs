use crate::error::{shape_err, Error, Result};
use crate::ndcore::ops::{bilinear_upsample_2x, sigmoid};
use crate::ndcore::{Element, NoGradGuard, ParamManifest, ParamStore, Tensor};
use crate::nn::{Conv, ConvUnit, Mode};

use super::blocks::EncoderLevel;
use super::config::{EncoderKind, SegConfig, LEVELS};
use super::fusion::Fusion;

#[derive(Debug, Clone)]
pub struct DecoderLevel<T: Element = f32> {
    /// 1×1 projection halving the upsampled channels.
    pub proj: ConvUnit<T>,
    pub fusion: Fusion<T>,
    pub dsc1: ConvUnit<T>,
    pub dsc2: ConvUnit<T>,
}

/// Encoder–decoder segmentation network with three downsamplings.
#[derive(Debug)]
pub struct SegNet<T: Element = f32> {
    pub config: SegConfig,
    pub store: ParamStore<T>,
    pub enc1: [ConvUnit<T>; 2],
    /// Levels 2..=4.
    pub encoders: Vec<EncoderLevel<T>>,
    /// Deepest first: fuses with E3, then E2, then E1.
    pub decoders: Vec<DecoderLevel<T>>,
    pub head: Conv<T>,
}

/// Every intermediate the forward pass exposes.
#[derive(Debug, Clone)]
pub struct SegTrace<T: Element = f32> {
    /// E1..E4.
    pub encoder: Vec<Tensor<T>>,
    /// Projected decoder maps entering fusion, deepest first (D3, D2, D1).
    pub decoder: Vec<Tensor<T>>,
    /// Fused maps, deepest first.
    pub fused: Vec<Tensor<T>>,
    pub prob: Tensor<T>,
}

impl<T: Element> SegNet<T> {
    pub fn new(config: SegConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new(seed);
        let bn = config.use_batchnorm;
        let w = config.widths();

        let enc1 = [
            ConvUnit::plain(&mut ps, "enc1.conv1", config.in_channels, w[0], 3, 1, bn)?,
            ConvUnit::plain(&mut ps, "enc1.conv2", w[0], w[0], 3, 1, bn)?,
        ];
        let mut encoders = Vec::with_capacity(LEVELS - 1);
        for lvl in 1..LEVELS {
            let name = format!("enc{}", lvl + 1);
            encoders.push(match config.variant.encoder() {
                EncoderKind::Residual => EncoderLevel::residual(&mut ps, &name, w[lvl - 1], w[lvl], bn)?,
                EncoderKind::Plain => EncoderLevel::plain(&mut ps, &name, w[lvl - 1], w[lvl], bn)?,
            });
        }
        let mut decoders = Vec::with_capacity(LEVELS - 1);
        for lvl in (0..LEVELS - 1).rev() {
            let name = format!("dec{}", lvl + 1);
            let c = w[lvl];
            decoders.push(DecoderLevel {
                proj: ConvUnit::plain(&mut ps, &format!("{name}.proj"), w[lvl + 1], c, 1, 1, bn)?,
                fusion: Fusion::new(
                    &mut ps,
                    &format!("{name}.fuse"),
                    config.variant.fusion(),
                    c,
                    config.attention_reduction,
                    config.spatial_gru_kernel,
                    config.gru_roles,
                )?,
                dsc1: ConvUnit::separable(&mut ps, &format!("{name}.dsc1"), c, c, 1, bn)?,
                dsc2: ConvUnit::separable(&mut ps, &format!("{name}.dsc2"), c, c, 1, bn)?,
            });
        }
        let head = Conv::new(&mut ps, "head", w[0], 1, 1, 1, true)?;
        Ok(SegNet {
            config,
            store: ps,
            enc1,
            encoders,
            decoders,
            head,
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels {
            return Err(shape_err!("segnet expects {} input channels, got {c}", self.config.in_channels));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return Err(shape_err!(
                "input extent {h}×{w} is not divisible by 8; pad the image before segmentation"
            ));
        }
        Ok(())
    }

    pub fn forward_trace(&self, x: &Tensor<T>, mode: Mode) -> Result<SegTrace<T>> {
        self.check_input(x)?;
        let mut h = self.enc1[0].forward_relu(x, mode)?;
        h = self.enc1[1].forward_relu(&h, mode)?;
        let mut encoder = vec![h.clone()];
        for enc in &self.encoders {
            h = enc.forward(&h, mode)?;
            encoder.push(h.clone());
        }
        let mut decoder = Vec::with_capacity(LEVELS - 1);
        let mut fused = Vec::with_capacity(LEVELS - 1);
        for (i, dec) in self.decoders.iter().enumerate() {
            let skip = &encoder[LEVELS - 2 - i];
            let d = dec.proj.forward_relu(&bilinear_upsample_2x(&h)?, mode)?;
            if d.shape() != skip.shape() {
                return Err(Error::Contract(format!(
                    "decoder map {:?} does not line up with skip {:?}",
                    d.shape(),
                    skip.shape()
                )));
            }
            let f = dec.fusion.forward(skip, &d)?;
            h = dec.dsc1.forward_relu(&f, mode)?;
            h = dec.dsc2.forward_relu(&h, mode)?;
            decoder.push(d);
            fused.push(f);
        }
        let prob = sigmoid(&self.head.forward(&h)?);
        Ok(SegTrace {
            encoder,
            decoder,
            fused,
            prob,
        })
    }

    /// N×3×H×W → N×1×H×W probabilities, recording the tape in train mode.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.forward_trace(x, mode)?.prob)
    }

    /// Eval-mode inference without tape; safe to call from several threads.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let _guard = NoGradGuard::new();
        self.forward(x, Mode::Eval)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.store.params()
    }

    pub fn manifest(&self) -> ParamManifest {
        self.store.manifest()
    }

    /// Architecture description: config echo followed by one line per
    /// parameter tensor.
    pub fn architecture_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.config.to_pairs() {
            s.push_str(&format!("@{k} = {v}\n"));
        }
        let m = self.manifest();
        for l in &m.layers {
            let shape: Vec<String> = l.shape.iter().map(|d| d.to_string()).collect();
            s.push_str(&format!("{} {} {}\n", l.name, shape.join("x"), l.count));
        }
        s.push_str(&format!("total {}\n", m.total));
        s
    }
}
