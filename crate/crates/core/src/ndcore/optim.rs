use crate::error::{Error, Result};
use crate::ndcore::element::Element;
use crate::ndcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with decoupled weight decay: `w ← w·(1 − lr·λ)` is applied before
/// the bias-corrected Adam update.
#[derive(Debug, Clone)]
pub struct AdamW<T: Element = f32> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// One update using explicit gradients, one per parameter in the same
    /// order on every call.
    pub fn step_with(&mut self, params: &[Tensor<T>], grads: &[Option<Vec<T>>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "adamw: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "adamw: state tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if self.m[i].len() != p.numel() {
                return Err(Error::Contract(format!(
                    "adamw: parameter {i} changed size from {} to {}",
                    self.m[i].len(),
                    p.numel()
                )));
            }
            if let Some(g) = g {
                if g.len() != p.numel() {
                    return Err(Error::Contract(format!(
                        "adamw: gradient {i} has {} values for a parameter of shape {:?}",
                        g.len(),
                        p.shape()
                    )));
                }
            }
        }

        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        let decay = T::lit(1.0 - c.lr * c.weight_decay);

        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let mut w = p.data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..w.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] = w[j] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// One update reading each parameter's accumulated grad buffer.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &[Tensor<T>]) -> Result<()> {
        let grads: Vec<Option<Vec<T>>> = params.iter().map(|p| p.grad()).collect();
        self.step_with(params, &grads)
    }
}

pub fn zero_grads<T: Element>(params: &[Tensor<T>]) {
    params.iter().for_each(|p| p.zero_grad());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: &[f64]) -> Tensor<f64> {
        Tensor::parameter(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn zero_grad_decay_only() {
        let p = param(&[1.0, -2.0, 0.5]);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..Default::default()
        });
        opt.step_with(&[p.clone()], &[Some(vec![0.0; 3])]).unwrap();
        let f = 1.0 - 0.01 * 0.1;
        assert_eq!(p.to_vec(), vec![1.0 * f, -2.0 * f, 0.5 * f]);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let p = param(&[1.0, -2.0]);
        let mut opt = AdamW::new(AdamWConfig::default());
        for _ in 0..5 {
            opt.step_with(&[p.clone()], &[Some(vec![0.0; 2])]).unwrap();
        }
        assert_eq!(p.to_vec(), vec![1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let p = param(&[0.0, 0.0]);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 1e-2,
            ..Default::default()
        });
        let mut prev = p.to_vec();
        for _ in 0..50 {
            opt.step_with(&[p.clone()], &[Some(vec![0.3, -2.0])]).unwrap();
            let now = p.to_vec();
            assert!(now[0] < prev[0]);
            assert!(now[1] > prev[1]);
            prev = now;
        }
    }

    #[test]
    fn first_step_matches_hand_formula() {
        let p = param(&[0.25]);
        let cfg = AdamWConfig {
            lr: 1e-4,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg);
        opt.step_with(&[p.clone()], &[Some(vec![1.0])]).unwrap();
        let m = (1.0 - cfg.beta1) * 1.0;
        let v = (1.0 - cfg.beta2) * 1.0;
        let mhat = m / (1.0 - cfg.beta1);
        let vhat = v / (1.0 - cfg.beta2);
        let want = 0.25 - cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        assert!((p.item() - want).abs() < 1e-10);
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let p = param(&[1.0, 2.0]);
        let mut opt = AdamW::new(AdamWConfig::default());
        assert!(opt.step_with(&[p.clone()], &[Some(vec![1.0])]).is_err());
        assert!(opt.step_with(&[p.clone()], &[]).is_err());
    }
}
