//! Two-stage inference: tiled segmentation, candidate extraction, and
//! classifier refinement.

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;

use crate::classnet::{classify_candidates, ClassConfig, ClassNet};
use crate::error::{Error, Result};
use crate::metrics::{match_detections, ConfusionCounts, Detection, Point};
use crate::ndcore::checkpoint;
use crate::segnet::{SegConfig, SegNet};
use crate::stain::{estimate_stain_profile, normalize_stain, StainProfile, DEFAULT_ANGLE_PERCENTILE, DEFAULT_OD_THRESHOLD};

use super::regions::{crop_centered, scored_regions};
use super::tiling::{plan_tiles, stitch_average, ProbMap};
use super::train::image_tensor;

/// Anything that turns an RGB image into a same-sized probability map.
pub trait Segmenter: Sync {
    fn segment(&self, image: &RgbImage) -> Result<ProbMap>;
}

/// Anything that scores candidate crops, one result per crop, in order.
pub trait CandidateClassifier: Sync {
    fn classify(&self, crops: &[RgbImage]) -> Vec<Result<f64>>;
}

/// Network extents must be divisible by the total downsampling factor.
pub const SEG_STRIDE: usize = 8;

/// Segmentation network applied over an overlapping tile plan.
pub struct TiledSegmenter<'a> {
    pub model: &'a SegNet<f32>,
    pub window: usize,
}

impl TiledSegmenter<'_> {
    /// Requested window shrunk to the image and rounded down to the stride.
    pub fn effective_window(&self, h: usize, w: usize) -> Result<usize> {
        let win = self.window.min(h).min(w) / SEG_STRIDE * SEG_STRIDE;
        if win == 0 {
            return Err(Error::Data(format!(
                "image {w}×{h} is smaller than the minimum tile of {SEG_STRIDE} pixels"
            )));
        }
        Ok(win)
    }
}

/// Runs `tile_fn` over every window of the plan (in parallel) and averages
/// the overlaps.
pub fn segment_tiled<F>(image: &RgbImage, window: usize, tile_fn: F) -> Result<ProbMap>
where
    F: Fn(&RgbImage) -> Result<ProbMap> + Sync,
{
    let (w, h) = (image.width() as usize, image.height() as usize);
    let plan = plan_tiles((h, w), window)?;
    let win = plan.window;
    let maps = plan
        .offsets
        .par_iter()
        .map(|&(r, c)| {
            let tile = image::imageops::crop_imm(image, c as u32, r as u32, win as u32, win as u32).to_image();
            tile_fn(&tile)
        })
        .collect::<Result<Vec<_>>>()?;
    stitch_average(&maps, &plan)
}

impl Segmenter for TiledSegmenter<'_> {
    fn segment(&self, image: &RgbImage) -> Result<ProbMap> {
        let win = self.effective_window(image.height() as usize, image.width() as usize)?;
        segment_tiled(image, win, |tile| {
            let p = self.model.predict(&image_tensor(tile)?)?;
            ProbMap::new(tile.height() as usize, tile.width() as usize, p.to_vec())
        })
    }
}

impl CandidateClassifier for ClassNet<f32> {
    fn classify(&self, crops: &[RgbImage]) -> Vec<Result<f64>> {
        classify_candidates(self, crops)
    }
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    pub seg_threshold: f32,
    pub class_threshold: f64,
    pub min_area: usize,
    pub crop_size: usize,
    pub tile_window: usize,
    /// Skip the classifier; scores are mean region probabilities.
    pub stage1_only: bool,
    /// Normalize every image to this profile before segmentation.
    pub normalize_to: Option<StainProfile>,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            seg_threshold: 0.5,
            class_threshold: 0.5,
            min_area: 100,
            crop_size: 64,
            tile_window: 2048,
            stage1_only: false,
            normalize_to: None,
        }
    }
}

impl InferOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.seg_threshold) || !(0.0..=1.0).contains(&self.class_threshold) {
            return Err(Error::Config("thresholds must lie in [0, 1]".into()));
        }
        if self.crop_size == 0 {
            return Err(Error::Config("crop_size must be positive".into()));
        }
        if self.tile_window < SEG_STRIDE {
            return Err(Error::Config(format!("tile_window must be at least {SEG_STRIDE}")));
        }
        Ok(())
    }
}

/// Stage 1 only: candidate regions above `min_area`, scored by their mean
/// probability, with their crops.
pub fn stage_one(image: &RgbImage, seg: &dyn Segmenter, opts: &InferOptions) -> Result<Vec<(Detection, RgbImage)>> {
    let prob = seg.segment(image)?;
    if (prob.height, prob.width) != (image.height() as usize, image.width() as usize) {
        return Err(Error::Contract(format!(
            "segmenter returned a {}×{} map for a {}×{} image",
            prob.width,
            prob.height,
            image.width(),
            image.height()
        )));
    }
    Ok(scored_regions(&prob, opts.seg_threshold)
        .into_iter()
        .filter(|(r, _)| r.area > opts.min_area)
        .map(|(r, s)| {
            let d = Detection {
                centroid: r.centroid,
                score: s,
                area: r.area,
            };
            (d, crop_centered(image, r.centroid, opts.crop_size))
        })
        .collect())
}

fn sort_desc(v: &mut [Detection]) {
    v.sort_by(|a, b| b.score.total_cmp(&a.score));
}

pub fn run_two_stage(
    image: &RgbImage,
    seg: &dyn Segmenter,
    cls: Option<&dyn CandidateClassifier>,
    opts: &InferOptions,
) -> Result<Vec<Detection>> {
    opts.validate()?;
    let normalized;
    let image = match &opts.normalize_to {
        Some(target) => {
            let src = estimate_stain_profile(image, DEFAULT_OD_THRESHOLD, DEFAULT_ANGLE_PERCENTILE)?;
            normalized = normalize_stain(image, &src, target)?;
            &normalized
        }
        None => image,
    };
    let cands = stage_one(image, seg, opts)?;
    let mut out: Vec<Detection> = match (cls, opts.stage1_only) {
        (Some(cls), false) => {
            let crops: Vec<RgbImage> = cands.iter().map(|(_, c)| c.clone()).collect();
            let probs = cls.classify(&crops);
            if probs.len() != cands.len() {
                return Err(Error::Contract(format!(
                    "classifier returned {} scores for {} candidates",
                    probs.len(),
                    cands.len()
                )));
            }
            let mut kept = Vec::new();
            for ((d, _), p) in cands.into_iter().zip(probs) {
                let p = p?;
                if p >= opts.class_threshold {
                    kept.push(Detection { score: p, ..d });
                }
            }
            kept
        }
        (None, false) => return Err(Error::Config("two-stage inference needs a classifier".into())),
        (_, true) => cands.into_iter().map(|(d, _)| d).collect(),
    };
    sort_desc(&mut out);
    Ok(out)
}

/// Inference over many images in parallel; one result per image, in order.
pub fn infer_images(
    images: &[(String, RgbImage)],
    seg: &dyn Segmenter,
    cls: Option<&dyn CandidateClassifier>,
    opts: &InferOptions,
) -> Vec<(String, Result<Vec<Detection>>)> {
    images
        .par_iter()
        .map(|(id, img)| (id.clone(), run_two_stage(img, seg, cls, opts)))
        .collect()
}

/// Confusion counts summed over every image id present on either side.
pub fn evaluate(
    preds: &BTreeMap<String, Vec<Detection>>,
    gts: &BTreeMap<String, Vec<Point>>,
    radius: f64,
) -> Result<ConfusionCounts> {
    let mut total = ConfusionCounts::default();
    let ids: std::collections::BTreeSet<&String> = preds.keys().chain(gts.keys()).collect();
    for id in ids {
        let p = preds.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let g = gts.get(id).map(Vec::as_slice).unwrap_or(&[]);
        total += match_detections(p, g, radius)?.counts;
    }
    Ok(total)
}

pub fn load_segnet(path: &Path) -> Result<SegNet<f32>> {
    let cfg = SegConfig::from_pairs(&checkpoint::read_config(path)?)?;
    let net = SegNet::new(cfg, 0)?;
    checkpoint::load(path, &net.store)?;
    Ok(net)
}

pub fn load_classnet(path: &Path) -> Result<ClassNet<f32>> {
    let cfg = ClassConfig::from_pairs(&checkpoint::read_config(path)?)?;
    let net = ClassNet::new(cfg, 0)?;
    checkpoint::load(path, &net.store)?;
    Ok(net)
}

pub fn save_segnet(path: &Path, net: &SegNet<f32>) -> Result<()> {
    checkpoint::save(path, &net.store, &net.config.to_pairs())
}

pub fn save_classnet(path: &Path, net: &ClassNet<f32>) -> Result<()> {
    checkpoint::save(path, &net.store, &net.config.to_pairs())
}
