//! Encoder–decoder mitosis segmentation network.
//!
//! Level 1 is two plain 3×3 convolutions. Levels 2–4 each downsample once
//! (three stride-2 steps in total) using either depthwise-separable residual
//! blocks or plain convolutions, depending on the [`Variant`]. The decoder
//! upsamples bilinearly, projects with a 1×1 convolution, fuses with the skip
//! connection and refines with two separable layers.

pub mod attention;
pub mod blocks;
pub mod config;
pub mod fusion;
pub mod model;

pub use attention::{Cbam, ConvGru};
pub use blocks::{Dscrb, DscrbKind, EncoderLevel};
pub use config::{EncoderKind, FusionKind, GruRoles, SegConfig, Variant};
pub use fusion::{Csag, CsagTrace, Fusion};
pub use model::{DecoderLevel, SegNet, SegTrace};
