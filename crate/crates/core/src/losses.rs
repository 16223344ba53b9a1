//! Segmentation and classification losses.
//!
//! All losses take a probability tensor and a binary target of the same
//! shape and return a differentiable scalar.

use crate::error::{shape_err, Error, Result};
use crate::ndcore::ops::weighted_sum;
use crate::ndcore::{Element, Tensor};

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TverskyParams {
    /// Weight on soft false positives.
    pub alpha: f64,
    /// Weight on soft false negatives.
    pub beta: f64,
    pub smooth: f64,
}

impl Default for TverskyParams {
    fn default() -> Self {
        TverskyParams {
            alpha: 0.3,
            beta: 0.7,
            smooth: 1.0,
        }
    }
}

impl TverskyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "tversky alpha and beta must be non-negative, got {} and {}",
                self.alpha, self.beta
            )));
        }
        if !(self.smooth >= 0.0) {
            return Err(Error::Config(format!("tversky smooth must be non-negative, got {}", self.smooth)));
        }
        Ok(())
    }
}

/// Weights of the BCE and Tversky terms in [`combined_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedWeights {
    pub bce: f64,
    pub tversky: f64,
}

impl Default for CombinedWeights {
    fn default() -> Self {
        CombinedWeights { bce: 0.3, tversky: 0.7 }
    }
}

fn check_target<T: Element>(pred: &Tensor<T>, target: &[T]) -> Result<()> {
    if pred.numel() != target.len() {
        return Err(shape_err!(
            "prediction has {} values but target has {}",
            pred.numel(),
            target.len()
        ));
    }
    if let Some(v) = target.iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::Contract(format!("target must be binary, found {v}")));
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clipped to `[ε, 1−ε]`.
/// Clipped entries pass no gradient.
pub fn bce_loss<T: Element>(pred: &Tensor<T>, target: &[T]) -> Result<Tensor<T>> {
    check_target(pred, target)?;
    let eps = T::lit(BCE_EPS);
    let hi = T::one() - eps;
    let n = target.len();
    let inv_n = T::lit(1.0 / n as f64);
    let p = pred.to_vec();
    let mut total = T::zero();
    for (&pv, &g) in p.iter().zip(target) {
        let pc = pv.max(eps).min(hi);
        total = total - (g * pc.ln() + (T::one() - g) * (T::one() - pc).ln());
    }
    let tgt = target.to_vec();
    Ok(Tensor::from_op(vec![total * inv_n], vec![1], "bce", vec![pred.clone()], move |gout, _| {
        let scale = gout[0] * inv_n;
        let d = p
            .iter()
            .zip(&tgt)
            .map(|(&pv, &g)| {
                if pv < eps || pv > hi {
                    T::zero()
                } else {
                    scale * ((T::one() - g) / (T::one() - pv) - g / pv)
                }
            })
            .collect();
        vec![Some(d)]
    }))
}

/// Soft confusion sums `(TP, FP, FN)` of probabilities against a mask.
pub fn soft_counts<T: Element>(pred: &[T], target: &[T]) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(target) {
        let (p, g) = (p.as_f64(), g.as_f64());
        tp += p * g;
        fp += p * (1.0 - g);
        fn_ += (1.0 - p) * g;
    }
    (tp, fp, fn_)
}

/// `1 − (TP + s) / (TP + α·FP + β·FN + s)` over soft counts summed across
/// the whole batch.
pub fn tversky_loss<T: Element>(pred: &Tensor<T>, target: &[T], params: TverskyParams) -> Result<Tensor<T>> {
    params.validate()?;
    check_target(pred, target)?;
    let TverskyParams { alpha, beta, smooth } = params;
    let p = pred.to_vec();
    let (tp, fp, fn_) = soft_counts(&p, target);
    let num = tp + smooth;
    let den = tp + alpha * fp + beta * fn_ + smooth;
    let loss = if den > 0.0 { 1.0 - num / den } else { 0.0 };
    let tgt = target.to_vec();
    Ok(Tensor::from_op(vec![T::lit(loss)], vec![1], "tversky", vec![pred.clone()], move |gout, _| {
        if den <= 0.0 {
            return vec![Some(vec![T::zero(); tgt.len()])];
        }
        // d(num)/dp = g ; d(den)/dp = g + α(1−g) − βg
        let g0 = gout[0].as_f64();
        let d = tgt
            .iter()
            .map(|&g| {
                let g = g.as_f64();
                let dnum = g;
                let dden = g + alpha * (1.0 - g) - beta * g;
                T::lit(-g0 * (dnum * den - num * dden) / (den * den))
            })
            .collect();
        vec![Some(d)]
    }))
}

/// `w_bce·BCE + w_tversky·Tversky`.
pub fn combined_loss<T: Element>(
    pred: &Tensor<T>,
    target: &[T],
    tversky: TverskyParams,
    weights: CombinedWeights,
) -> Result<Tensor<T>> {
    let b = bce_loss(pred, target)?;
    let t = tversky_loss(pred, target, tversky)?;
    weighted_sum(&[(&b, weights.bce), (&t, weights.tversky)])
}
