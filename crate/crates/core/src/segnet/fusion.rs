//! Skip-connection fusion for each decoder level.

use crate::error::{shape_err, Result};
use crate::ndcore::ops::{add, mul_broadcast};
use crate::ndcore::{Element, ParamStore, Tensor};

use super::attention::{Cbam, ConvGru};
use super::config::{FusionKind, GruRoles};

/// Intermediate maps of one gate evaluation.
#[derive(Debug, Clone)]
pub struct CsagTrace<T: Element = f32> {
    pub ce: Tensor<T>,
    pub cd: Tensor<T>,
    pub cf: Tensor<T>,
    pub se: Tensor<T>,
    pub sd: Tensor<T>,
    pub sf: Tensor<T>,
    pub out: Tensor<T>,
}

/// Channel–spatial attention gate. One CBAM serves both E and D at a level.
#[derive(Debug, Clone)]
pub struct Csag<T: Element = f32> {
    pub cbam: Cbam<T>,
    pub channel_gru: ConvGru<T>,
    pub spatial_gru: ConvGru<T>,
    pub roles: GruRoles,
}

impl<T: Element> Csag<T> {
    pub fn new(
        ps: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        spatial_kernel: usize,
        roles: GruRoles,
    ) -> Result<Self> {
        Ok(Csag {
            cbam: Cbam::new(ps, &format!("{name}.cbam"), channels, reduction)?,
            channel_gru: ConvGru::new(ps, &format!("{name}.cgru"), channels, 1)?,
            spatial_gru: ConvGru::new(ps, &format!("{name}.sgru"), 1, spatial_kernel)?,
            roles,
        })
    }

    fn gru(&self, cell: &ConvGru<T>, from_e: &Tensor<T>, from_d: &Tensor<T>) -> Result<Tensor<T>> {
        match self.roles {
            GruRoles::EncoderInput => cell.forward(from_e, from_d),
            GruRoles::DecoderInput => cell.forward(from_d, from_e),
        }
    }

    pub fn trace(&self, e: &Tensor<T>, d: &Tensor<T>) -> Result<CsagTrace<T>> {
        if e.shape() != d.shape() {
            return Err(shape_err!("gate inputs differ: E {:?} vs D {:?}", e.shape(), d.shape()));
        }
        let ce = self.cbam.channel_map(e)?;
        let cd = self.cbam.channel_map(d)?;
        let cf = self.gru(&self.channel_gru, &ce, &cd)?;
        let se = self.cbam.spatial_map(e)?;
        let sd = self.cbam.spatial_map(d)?;
        let sf = self.gru(&self.spatial_gru, &se, &sd)?;
        let out = mul_broadcast(&mul_broadcast(&add(e, d)?, &cf)?, &sf)?;
        Ok(CsagTrace {
            ce,
            cd,
            cf,
            se,
            sd,
            sf,
            out,
        })
    }

    /// `(E + D) ⊙ CF ⊙ SF`.
    pub fn fuse(&self, e: &Tensor<T>, d: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.trace(e, d)?.out)
    }
}

#[derive(Debug, Clone)]
pub enum Fusion<T: Element = f32> {
    /// CBAM refinement of `E + D`.
    Cbam(Cbam<T>),
    /// `GRU(CBAM(E), CBAM(D))` with a full-width 1×1 GRU.
    CbamGru {
        cbam: Cbam<T>,
        gru: ConvGru<T>,
        roles: GruRoles,
    },
    Csag(Csag<T>),
}

impl<T: Element> Fusion<T> {
    pub fn new(
        ps: &mut ParamStore<T>,
        name: &str,
        kind: FusionKind,
        channels: usize,
        reduction: usize,
        spatial_kernel: usize,
        roles: GruRoles,
    ) -> Result<Self> {
        Ok(match kind {
            FusionKind::Cbam => Fusion::Cbam(Cbam::new(ps, &format!("{name}.cbam"), channels, reduction)?),
            FusionKind::CbamGru => Fusion::CbamGru {
                cbam: Cbam::new(ps, &format!("{name}.cbam"), channels, reduction)?,
                gru: ConvGru::new(ps, &format!("{name}.gru"), channels, 1)?,
                roles,
            },
            FusionKind::Csag => Fusion::Csag(Csag::new(ps, name, channels, reduction, spatial_kernel, roles)?),
        })
    }

    pub fn forward(&self, e: &Tensor<T>, d: &Tensor<T>) -> Result<Tensor<T>> {
        if e.shape() != d.shape() {
            return Err(shape_err!("skip fusion: E {:?} vs D {:?}", e.shape(), d.shape()));
        }
        match self {
            Fusion::Cbam(cbam) => cbam.attend(&add(e, d)?),
            Fusion::CbamGru { cbam, gru, roles } => {
                let (ea, da) = (cbam.attend(e)?, cbam.attend(d)?);
                match roles {
                    GruRoles::EncoderInput => gru.forward(&ea, &da),
                    GruRoles::DecoderInput => gru.forward(&da, &ea),
                }
            }
            Fusion::Csag(g) => g.fuse(e, d),
        }
    }
}
