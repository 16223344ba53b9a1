//! Everything around the two networks: tiling, post-processing, patch
//! sampling, synthetic data, training and two-stage inference.

pub mod dataset;
pub mod infer;
pub mod patches;
pub mod recipe;
pub mod regions;
pub mod synth;
pub mod tiling;
pub mod train;

pub use infer::{
    evaluate, infer_images, load_classnet, segment_tiled, load_segnet, run_two_stage, save_classnet, save_segnet, stage_one,
    CandidateClassifier, InferOptions, Segmenter, TiledSegmenter,
};
pub use patches::{augment_patch, prepare_patches, AugmentDraw, PatchSpec, PatchStrategy};
pub use regions::{crop_centered, extract_candidates, label_regions, BBox, Region};
pub use synth::{generate_synthetic, SynthConfig, SynthDataset, SynthImage};
pub use tiling::{plan_tiles, stitch_average, ProbMap, TilePlan};
pub use train::{candidate_samples, train_classifier, train_segmentation, DecayMode, TrainConfig, TrainLog};
pub use recipe::{class_samples, seg_patches, SegPatchRecipe};
pub use dataset::Sample;
