use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Encoder style for levels 2–4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Four plain 3×3 convolutions per level, first one stride 2, no shortcut.
    Plain,
    /// DSCRB_a followed by DSCRB_b.
    Residual,
}

/// How a decoder map is merged with its skip connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    /// CBAM on `E + D`.
    Cbam,
    /// CBAM-refined E and D merged by a convolutional GRU.
    CbamGru,
    /// Channel–spatial attention gate.
    Csag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    DscCbam,
    DscCbamGru,
    DscrbCbam,
    DscrbCbamGru,
    DscrbCsag,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::DscCbam,
        Variant::DscCbamGru,
        Variant::DscrbCbam,
        Variant::DscrbCbamGru,
        Variant::DscrbCsag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DscCbam => "dsc_cbam",
            Variant::DscCbamGru => "dsc_cbam_gru",
            Variant::DscrbCbam => "dscrb_cbam",
            Variant::DscrbCbamGru => "dscrb_cbam_gru",
            Variant::DscrbCsag => "dscrb_csag",
        }
    }

    pub fn encoder(self) -> EncoderKind {
        match self {
            Variant::DscCbam | Variant::DscCbamGru => EncoderKind::Plain,
            _ => EncoderKind::Residual,
        }
    }

    pub fn fusion(self) -> FusionKind {
        match self {
            Variant::DscCbam | Variant::DscrbCbam => FusionKind::Cbam,
            Variant::DscCbamGru | Variant::DscrbCbamGru => FusionKind::CbamGru,
            Variant::DscrbCsag => FusionKind::Csag,
        }
    }

    /// Module usage flags in ablation-table column order:
    /// DSC, CBAM, GRU, DSCRB, CSAG.
    pub fn module_flags(self) -> [bool; 5] {
        match self {
            Variant::DscCbam => [true, true, false, false, false],
            Variant::DscCbamGru => [true, true, true, false, false],
            Variant::DscrbCbam => [false, true, false, true, false],
            Variant::DscrbCbamGru => [false, true, true, true, false],
            Variant::DscrbCsag => [false, false, false, true, true],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Which attention descriptor plays the GRU hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GruRoles {
    /// Encoder attention is the input, decoder attention the hidden state.
    EncoderInput,
    DecoderInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegConfig {
    pub in_channels: usize,
    /// Channels at level 1; doubled at each of the three deeper levels.
    pub base_width: usize,
    /// Channel-attention MLP reduction ratio.
    pub attention_reduction: usize,
    pub variant: Variant,
    pub use_batchnorm: bool,
    pub gru_roles: GruRoles,
    /// Gate kernel of the spatial-attention GRU.
    pub spatial_gru_kernel: usize,
}

pub const LEVELS: usize = 4;

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            in_channels: 3,
            base_width: 32,
            attention_reduction: 8,
            variant: Variant::DscrbCsag,
            use_batchnorm: true,
            gru_roles: GruRoles::EncoderInput,
            spatial_gru_kernel: 1,
        }
    }
}

impl SegConfig {
    pub fn widths(&self) -> [usize; LEVELS] {
        let b = self.base_width;
        [b, 2 * b, 4 * b, 8 * b]
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.in_channels == 0 {
            return Err(Error::Config("base_width and in_channels must be positive".into()));
        }
        if self.base_width % 2 != 0 {
            return Err(Error::Config(format!(
                "base_width must be even so decoder projections halve cleanly, got {}",
                self.base_width
            )));
        }
        if self.attention_reduction == 0 {
            return Err(Error::Config("attention_reduction must be positive".into()));
        }
        if self.spatial_gru_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "spatial_gru_kernel must be odd, got {}",
                self.spatial_gru_kernel
            )));
        }
        Ok(())
    }

    /// Key/value echo stored with checkpoints.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("model".into(), "segnet".into()),
            ("in_channels".into(), self.in_channels.to_string()),
            ("base_width".into(), self.base_width.to_string()),
            ("attention_reduction".into(), self.attention_reduction.to_string()),
            ("variant".into(), self.variant.name().into()),
            ("use_batchnorm".into(), self.use_batchnorm.to_string()),
            (
                "gru_roles".into(),
                match self.gru_roles {
                    GruRoles::EncoderInput => "encoder_input",
                    GruRoles::DecoderInput => "decoder_input",
                }
                .into(),
            ),
            ("spatial_gru_kernel".into(), self.spatial_gru_kernel.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut c = SegConfig::default();
        let num = |k: &str, v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Config(format!("`{k}`: cannot parse `{v}` as an integer")))
        };
        for (k, v) in pairs {
            match k.as_str() {
                "model" if v != "segnet" => {
                    return Err(Error::Config(format!("checkpoint holds a `{v}` model, not segnet")))
                }
                "model" => {}
                "in_channels" => c.in_channels = num(k, v)?,
                "base_width" => c.base_width = num(k, v)?,
                "attention_reduction" => c.attention_reduction = num(k, v)?,
                "variant" => c.variant = v.parse()?,
                "use_batchnorm" => {
                    c.use_batchnorm = v
                        .parse()
                        .map_err(|_| Error::Config(format!("`use_batchnorm`: cannot parse `{v}`")))?
                }
                "gru_roles" => {
                    c.gru_roles = match v.as_str() {
                        "encoder_input" => GruRoles::EncoderInput,
                        "decoder_input" => GruRoles::DecoderInput,
                        _ => return Err(Error::Config(format!("unknown gru_roles `{v}`"))),
                    }
                }
                "spatial_gru_kernel" => c.spatial_gru_kernel = num(k, v)?,
                other => return Err(Error::Config(format!("unknown segnet config key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}
