//! Training-set assembly shared by the CLI and the end-to-end checks.

use image::{GrayImage, RgbImage};
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::dataset::Sample;
use super::infer::{InferOptions, Segmenter};
use super::patches::{prepare_patches, PatchSpec, PatchStrategy};
use super::train::candidate_samples;

#[derive(Debug, Clone)]
pub struct SegPatchRecipe {
    pub patch: usize,
    /// Patches centered on each ground-truth mitosis.
    pub centered: bool,
    pub jitter: i64,
    pub random_per_image: usize,
    /// Also include a full sliding-window pass.
    pub sliding: bool,
    pub overlap: usize,
}

impl Default for SegPatchRecipe {
    fn default() -> Self {
        SegPatchRecipe {
            patch: 256,
            centered: true,
            jitter: 16,
            random_per_image: 4,
            sliding: false,
            overlap: 32,
        }
    }
}

/// Patches from every sample with a mask, in sample order.
pub fn seg_patches(samples: &[Sample], recipe: &SegPatchRecipe, seed: u64) -> Result<Vec<(RgbImage, GrayImage)>> {
    let per: Vec<Vec<(RgbImage, GrayImage)>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let Some(mask) = &s.mask else {
                return Err(Error::Data(format!("sample `{}` has no mask", s.id)));
            };
            let spec = |strategy, count| PatchSpec {
                strategy,
                patch: recipe.patch,
                overlap: recipe.overlap,
                count,
                jitter: recipe.jitter,
                seed: seed.wrapping_add(i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ strategy as u64,
            };
            let mut out = Vec::new();
            if recipe.centered {
                out.extend(prepare_patches(&s.image, mask, &s.centroids, &spec(PatchStrategy::MitosisCentered, 0))?);
            }
            if recipe.random_per_image > 0 {
                out.extend(prepare_patches(&s.image, mask, &[], &spec(PatchStrategy::Random, recipe.random_per_image))?);
            }
            if recipe.sliding {
                out.extend(prepare_patches(&s.image, mask, &[], &spec(PatchStrategy::Sliding, 0))?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let out: Vec<_> = per.into_iter().flatten().collect();
    if out.is_empty() {
        return Err(Error::Data("no training patches could be drawn".into()));
    }
    Ok(out)
}

/// Classifier crops mined with a trained segmenter; see
/// [`candidate_samples`] for the labeling rule.
pub fn class_samples(
    samples: &[Sample],
    seg: &dyn Segmenter,
    opts: &InferOptions,
    radius: f64,
    add_truth: bool,
) -> Result<Vec<(RgbImage, bool)>> {
    let per: Vec<Vec<(RgbImage, bool)>> = samples
        .par_iter()
        .map(|s| candidate_samples(&s.image, &s.centroids, seg, opts, radius, add_truth))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}
