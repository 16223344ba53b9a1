//! Training loops for both networks.

use std::str::FromStr;

use image::{GrayImage, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classnet::{crop_to_input, stack, ClassNet};
use crate::error::{Error, Result};
use crate::losses::{bce_loss, combined_loss, CombinedWeights, TverskyParams};
use crate::ndcore::{AdamW, AdamWConfig, Tensor};
use crate::nn::Mode;
use crate::segnet::SegNet;

use crate::metrics::{match_points, Point};

use super::infer::{stage_one, InferOptions, Segmenter};
use super::patches::{apply_augment, AugmentDraw};
use super::regions::crop_centered;

/// How the single "decay ratio" hyperparameter is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayMode {
    /// Multiply the learning rate by the ratio once, at 80% of training.
    LrStep,
    /// Use the ratio as AdamW's decoupled weight decay.
    WeightDecay,
}

impl FromStr for DecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr_step" => Ok(DecayMode::LrStep),
            "weight_decay" => Ok(DecayMode::WeightDecay),
            _ => Err(Error::Config(format!("unknown decay mode `{s}` (lr_step, weight_decay)"))),
        }
    }
}

impl DecayMode {
    pub fn name(self) -> &'static str {
        match self {
            DecayMode::LrStep => "lr_step",
            DecayMode::WeightDecay => "weight_decay",
        }
    }
}

pub const DECAY_AT: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay_ratio: f64,
    pub decay_mode: DecayMode,
    /// Stops early once this many optimizer steps have run.
    pub max_steps: Option<usize>,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr: 1e-4,
            decay_ratio: 0.1,
            decay_mode: DecayMode::LrStep,
            max_steps: None,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if !(self.decay_ratio >= 0.0) {
            return Err(Error::Config(format!("decay ratio must be non-negative, got {}", self.decay_ratio)));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(Error::Config("epochs must be positive".into()));
        }
        Ok(())
    }

    fn optimizer<T: crate::ndcore::Element>(&self) -> AdamW<T> {
        AdamW::new(AdamWConfig {
            lr: self.lr,
            weight_decay: match self.decay_mode {
                DecayMode::LrStep => 0.0,
                DecayMode::WeightDecay => self.decay_ratio,
            },
            ..AdamWConfig::default()
        })
    }

    /// Steps the run will take over `n` samples.
    pub fn total_steps(&self, n: usize) -> usize {
        let per_epoch = n.div_ceil(self.batch_size);
        let planned = if self.epochs == 0 { usize::MAX } else { self.epochs * per_epoch };
        self.max_steps.map_or(planned, |m| m.min(planned))
    }

    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let at = (DECAY_AT * total as f64).round() as usize;
        if self.decay_mode == DecayMode::LrStep && step >= at {
            self.lr * self.decay_ratio
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
}

impl TrainLog {
    /// Trailing moving average with the given window.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        (0..self.losses.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                let s = &self.losses[lo..=i];
                s.iter().sum::<f64>() / s.len() as f64
            })
            .collect()
    }
}

/// Progress callback payload.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn image_to_planes(img: &RgbImage) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0.0f32; 3 * w * h];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * w * h + i] = p[c] as f32 / 255.0;
        }
    }
    out
}

pub fn image_tensor(img: &RgbImage) -> Result<Tensor<f32>> {
    Tensor::from_vec(image_to_planes(img), &[1, 3, img.height() as usize, img.width() as usize])
}

pub fn mask_to_target(mask: &GrayImage) -> Vec<f32> {
    mask.as_raw().iter().map(|&v| if v > 127 { 1.0 } else { 0.0 }).collect()
}

/// Shared epoch/batch/step driver. `step_fn` receives the batch's sample
/// indices and the augmentation seed base, returns the loss tensor.
fn drive<F>(n: usize, cfg: &TrainConfig, params: Vec<Tensor<f32>>, mut batch_loss: F, mut on_step: impl FnMut(StepInfo)) -> Result<TrainLog>
where
    F: FnMut(&[usize], u64) -> Result<Tensor<f32>>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    let total = cfg.total_steps(n);
    let mut opt = cfg.optimizer::<f32>();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    let mut epoch = 0usize;
    while step < total {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 1, epoch as u64));
        order.shuffle(&mut rng);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if step >= total {
                break;
            }
            let lr = cfg.lr_at(step, total);
            opt.set_lr(lr);
            for p in &params {
                p.zero_grad();
            }
            let loss = batch_loss(idx, mix(cfg.seed, 2 + epoch as u64, b as u64))?;
            let lv = loss.item() as f64;
            if !lv.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {lv} at epoch {epoch}, batch {b} (step {step})"
                )));
            }
            loss.backward()?;
            opt.step(&params)?;
            log.losses.push(lv);
            log.lrs.push(lr);
            on_step(StepInfo {
                step,
                epoch,
                loss: lv,
                lr,
            });
            step += 1;
        }
        epoch += 1;
    }
    Ok(log)
}

fn maybe_augment(img: &RgbImage, mask: &GrayImage, augment: bool, seed: u64) -> (RgbImage, GrayImage) {
    if augment {
        apply_augment(img, mask, AugmentDraw::sample(seed))
    } else {
        (img.clone(), mask.clone())
    }
}

/// Segmentation training with the combined BCE/Tversky loss.
pub fn train_segmentation(
    model: &SegNet<f32>,
    patches: &[(RgbImage, GrayImage)],
    cfg: &TrainConfig,
    on_step: impl FnMut(StepInfo),
) -> Result<TrainLog> {
    if let Some((p, _)) = patches.first() {
        if patches.iter().any(|(q, m)| q.dimensions() != p.dimensions() || m.dimensions() != p.dimensions()) {
            return Err(Error::Data("segmentation patches must share one extent".into()));
        }
    }
    let tversky = TverskyParams::default();
    let weights = CombinedWeights::default();
    drive(
        patches.len(),
        cfg,
        model.params(),
        |idx, seed| {
            // Parallel loading keeps batch order: results are collected by index.
            let items: Vec<(Vec<f32>, Vec<f32>)> = idx
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let (img, m) = maybe_augment(&patches[i].0, &patches[i].1, cfg.augment, mix(seed, k as u64, i as u64));
                    (image_to_planes(&img), mask_to_target(&m))
                })
                .collect();
            let (w, h) = patches[idx[0]].0.dimensions();
            let mut x = Vec::with_capacity(items.len() * 3 * (w * h) as usize);
            let mut t = Vec::with_capacity(items.len() * (w * h) as usize);
            for (a, b) in items {
                x.extend(a);
                t.extend(b);
            }
            let x = Tensor::from_vec(x, &[idx.len(), 3, h as usize, w as usize])?;
            let pred = model.forward(&x, Mode::Train)?;
            combined_loss(&pred, &t, tversky, weights)
        },
        on_step,
    )
}

/// Classifier training with BCE over labeled crops.
pub fn train_classifier(
    model: &ClassNet<f32>,
    samples: &[(RgbImage, bool)],
    cfg: &TrainConfig,
    on_step: impl FnMut(StepInfo),
) -> Result<TrainLog> {
    drive(
        samples.len(),
        cfg,
        model.params(),
        |idx, seed| {
            let inputs: Vec<Tensor<f32>> = idx
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let crop = &samples[i].0;
                    let crop = if cfg.augment {
                        let d = AugmentDraw {
                            blur_sigma: 0.0,
                            scale: 1.0,
                            ..AugmentDraw::sample(mix(seed, k as u64, i as u64))
                        };
                        apply_augment(crop, &GrayImage::new(crop.width(), crop.height()), d).0
                    } else {
                        crop.clone()
                    };
                    crop_to_input::<f32>(&crop)
                })
                .collect::<Result<_>>()?;
            let target: Vec<f32> = idx.iter().map(|&i| if samples[i].1 { 1.0 } else { 0.0 }).collect();
            let pred = model.forward(&stack(&inputs)?, Mode::Train)?;
            bce_loss(&pred, &target)
        },
        on_step,
    )
}

/// Labeled classifier crops mined from stage-1 candidates: a candidate is
/// positive when the matcher pairs its centroid with a ground-truth point.
/// With `add_truth`, a crop centered on every ground-truth point is added
/// as a positive too.
pub fn candidate_samples(
    image: &RgbImage,
    truth: &[Point],
    seg: &dyn Segmenter,
    opts: &InferOptions,
    radius: f64,
    add_truth: bool,
) -> Result<Vec<(RgbImage, bool)>> {
    let cands = stage_one(image, seg, opts)?;
    let pts: Vec<Point> = cands.iter().map(|(d, _)| d.centroid).collect();
    let m = match_points(&pts, truth, radius)?;
    let mut positive = vec![false; cands.len()];
    for &(i, _) in &m.pairs {
        positive[i] = true;
    }
    let mut out: Vec<(RgbImage, bool)> = cands.into_iter().map(|(_, c)| c).zip(positive).collect();
    if add_truth {
        out.extend(truth.iter().map(|&p| (crop_centered(image, p, opts.crop_size), true)));
    }
    Ok(out)
}
