//! Run configuration: defaults, `key = value` files and flag overrides.

use std::path::{Path, PathBuf};

use crate::classnet::{parse_depths, ClassConfig};
use crate::error::{Error, Result};
use crate::pipeline::{DecayMode, InferOptions, PatchStrategy, SegPatchRecipe, TrainConfig};
use crate::segnet::{GruRoles, SegConfig, Variant};

/// Every accepted key with its default and help line.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data", "", "dataset directory (images/, masks/, centroids.csv)"),
    ("out", "", "output file or directory"),
    ("image", "", "single input image"),
    ("truth", "", "ground-truth centroid CSV (image_id,x,y)"),
    ("pred", "", "detection CSV (image_id,x,y,score,area)"),
    ("checkpoint", "", "checkpoint written by train-seg / train-class"),
    ("seg_checkpoint", "", "segmentation checkpoint for infer / train-class"),
    ("class_checkpoint", "", "classifier checkpoint for infer"),
    ("profile", "", "target stain profile file (8 numbers); built-in reference when empty"),
    ("reference_image", "", "estimate the target stain profile from this image instead"),
    ("seg_threshold", "0.5", "probability-map binarization threshold"),
    ("class_threshold", "0.5", "classifier acceptance threshold"),
    ("min_area", "100", "candidate regions must be strictly larger than this"),
    ("crop_size", "64", "candidate crop side before the classifier resize"),
    ("tile_window", "2048", "segmentation tile side"),
    ("stage1_only", "false", "skip the classifier"),
    ("match_radius", "20", "centroid matching radius in pixels"),
    ("normalize", "false", "stain-normalize images before inference and training"),
    ("od_threshold", "0.15", "optical-density magnitude below which pixels count as background"),
    ("angle_percentile", "1", "angular percentile for stain vector extremes"),
    ("variant", "dscrb_csag", "segmentation variant: dsc_cbam, dsc_cbam_gru, dscrb_cbam, dscrb_cbam_gru, dscrb_csag"),
    ("base_width", "32", "segmentation channels at level 1"),
    ("attention_reduction", "8", "channel-attention reduction ratio"),
    ("use_batchnorm", "true", "batch normalization after convolutions"),
    ("gru_roles", "encoder_input", "attention GRU roles: encoder_input or decoder_input"),
    ("class_depths", "3,4,6,3", "classifier residual blocks per stage"),
    ("class_width", "16", "classifier stem width"),
    ("epochs", "10", "training epochs"),
    ("batch_size", "16", "training batch size"),
    ("lr", "1e-4", "initial learning rate"),
    ("decay_ratio", "0.1", "decay ratio (see decay_mode)"),
    ("decay_mode", "lr_step", "lr_step: lr x ratio at 80% of training; weight_decay: AdamW decay = ratio"),
    ("max_steps", "0", "stop after this many optimizer steps (0 = no limit)"),
    ("augment", "true", "online flip/rotate/blur/rescale augmentation"),
    ("seed", "0", "seed for initialization, shuffling, augmentation and synthesis"),
    ("workers", "0", "worker threads (0 = all cores)"),
    ("patch", "256", "segmentation training patch side"),
    ("overlap", "32", "sliding-window patch overlap"),
    ("patch_strategy", "mitosis_centered,random", "comma list of sliding, random, mitosis_centered"),
    ("random_per_image", "4", "random patches per image"),
    ("jitter", "16", "centered-patch jitter in pixels"),
    ("mine_threshold", "0.3", "segmentation threshold when mining classifier candidates"),
    ("mine_min_area", "50", "minimum area when mining classifier candidates"),
    ("add_truth", "true", "add ground-truth-centered crops as classifier positives"),
    ("synth_count", "64", "images generated by synth"),
    ("synth_size", "512", "synthetic image side"),
    ("ablate_steps", "50", "smoke-training steps per ablation variant"),
    ("box_size", "64", "overlay box side"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub seg_checkpoint: Option<PathBuf>,
    pub class_checkpoint: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub reference_image: Option<PathBuf>,
    pub normalize: bool,
    pub od_threshold: f64,
    pub angle_percentile: f64,
    pub seg_threshold: f32,
    pub class_threshold: f64,
    pub min_area: usize,
    pub crop_size: usize,
    pub tile_window: usize,
    pub stage1_only: bool,
    pub match_radius: f64,
    pub variant: Variant,
    pub base_width: usize,
    pub attention_reduction: usize,
    pub use_batchnorm: bool,
    pub gru_roles: GruRoles,
    pub class_depths: [usize; 4],
    pub class_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay_ratio: f64,
    pub decay_mode: DecayMode,
    pub max_steps: usize,
    pub augment: bool,
    pub seed: u64,
    pub workers: usize,
    pub patch: usize,
    pub overlap: usize,
    pub patch_strategy: Vec<PatchStrategy>,
    pub random_per_image: usize,
    pub jitter: i64,
    pub mine_threshold: f32,
    pub mine_min_area: usize,
    pub add_truth: bool,
    pub synth_count: usize,
    pub synth_size: usize,
    pub ablate_steps: usize,
    pub box_size: usize,
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("cannot parse `{v}` as a boolean")),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// Nearest known key by edit distance, also trying each key without its
/// first `_`-prefix; ties go to the earlier key in the table.
pub fn nearest_key(key: &str) -> &'static str {
    let dist = |k: &str| {
        let whole = strsim::levenshtein(key, k);
        match k.split_once('_') {
            Some((_, tail)) => whole.min(strsim::levenshtein(key, tail) + 1),
            None => whole,
        }
    };
    KEYS.iter()
        .map(|k| k.0)
        .min_by_key(|k| dist(k))
        .expect("key table is not empty")
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            command: String::new(),
            data: None,
            out: None,
            image: None,
            truth: None,
            pred: None,
            checkpoint: None,
            seg_checkpoint: None,
            class_checkpoint: None,
            profile: None,
            reference_image: None,
            normalize: false,
            od_threshold: 0.0,
            angle_percentile: 0.0,
            seg_threshold: 0.0,
            class_threshold: 0.0,
            min_area: 0,
            crop_size: 0,
            tile_window: 0,
            stage1_only: false,
            match_radius: 0.0,
            variant: Variant::DscrbCsag,
            base_width: 0,
            attention_reduction: 0,
            use_batchnorm: false,
            gru_roles: GruRoles::EncoderInput,
            class_depths: [0; 4],
            class_width: 0,
            epochs: 0,
            batch_size: 0,
            lr: 0.0,
            decay_ratio: 0.0,
            decay_mode: DecayMode::LrStep,
            max_steps: 0,
            augment: false,
            seed: 0,
            workers: 0,
            patch: 0,
            overlap: 0,
            patch_strategy: Vec::new(),
            random_per_image: 0,
            jitter: 0,
            mine_threshold: 0.0,
            mine_min_area: 0,
            add_truth: false,
            synth_count: 0,
            synth_size: 0,
            ablate_steps: 0,
            box_size: 0,
        };
        for (k, v, _) in KEYS {
            c.set(k, v).expect("documented defaults parse");
        }
        c
    }
}

impl RunConfig {
    /// Sets one key; the error names only the problem with the value.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let v = v.trim();
        match key {
            "data" => self.data = path(v),
            "out" => self.out = path(v),
            "image" => self.image = path(v),
            "truth" => self.truth = path(v),
            "pred" => self.pred = path(v),
            "checkpoint" => self.checkpoint = path(v),
            "seg_checkpoint" => self.seg_checkpoint = path(v),
            "class_checkpoint" => self.class_checkpoint = path(v),
            "profile" => self.profile = path(v),
            "reference_image" => self.reference_image = path(v),
            "normalize" => self.normalize = flag(v)?,
            "od_threshold" => self.od_threshold = num(v)?,
            "angle_percentile" => self.angle_percentile = num(v)?,
            "seg_threshold" => self.seg_threshold = num(v)?,
            "class_threshold" => self.class_threshold = num(v)?,
            "min_area" => self.min_area = num(v)?,
            "crop_size" => self.crop_size = num(v)?,
            "tile_window" => self.tile_window = num(v)?,
            "stage1_only" => self.stage1_only = flag(v)?,
            "match_radius" => self.match_radius = num(v)?,
            "variant" => self.variant = v.parse().map_err(|e: Error| e.to_string())?,
            "base_width" => self.base_width = num(v)?,
            "attention_reduction" => self.attention_reduction = num(v)?,
            "use_batchnorm" => self.use_batchnorm = flag(v)?,
            "gru_roles" => {
                self.gru_roles = match v {
                    "encoder_input" => GruRoles::EncoderInput,
                    "decoder_input" => GruRoles::DecoderInput,
                    _ => return Err(format!("unknown gru roles `{v}` (encoder_input, decoder_input)")),
                }
            }
            "class_depths" => self.class_depths = parse_depths(v).map_err(|e| e.to_string())?,
            "class_width" => self.class_width = num(v)?,
            "epochs" => self.epochs = num(v)?,
            "batch_size" => self.batch_size = num(v)?,
            "lr" => self.lr = num(v)?,
            "decay_ratio" => self.decay_ratio = num(v)?,
            "decay_mode" => self.decay_mode = v.parse().map_err(|e: Error| e.to_string())?,
            "max_steps" => self.max_steps = num(v)?,
            "augment" => self.augment = flag(v)?,
            "seed" => self.seed = num(v)?,
            "workers" => self.workers = num(v)?,
            "patch" => self.patch = num(v)?,
            "overlap" => self.overlap = num(v)?,
            "patch_strategy" => {
                self.patch_strategy = v
                    .split(',')
                    .map(|s| s.trim().parse::<PatchStrategy>().map_err(|e| e.to_string()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "random_per_image" => self.random_per_image = num(v)?,
            "jitter" => self.jitter = num(v)?,
            "mine_threshold" => self.mine_threshold = num(v)?,
            "mine_min_area" => self.mine_min_area = num(v)?,
            "add_truth" => self.add_truth = flag(v)?,
            "synth_count" => self.synth_count = num(v)?,
            "synth_size" => self.synth_size = num(v)?,
            "ablate_steps" => self.ablate_steps = num(v)?,
            "box_size" => self.box_size = num(v)?,
            _ => return Err(format!("unknown key (did you mean `{}`?)", nearest_key(key))),
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("{origin} line {}: expected `key = value`", i + 1)));
            };
            let k = k.trim();
            self.set(k, v)
                .map_err(|e| Error::Config(format!("{origin} line {}: key `{k}`: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, file: &Path) -> Result<()> {
        let text = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
        self.apply_text(&text, &file.display().to_string())
    }

    /// Defaults, then the file, then flags.
    pub fn resolve(command: &str, file: Option<&Path>, flags: &[(String, String)]) -> Result<Self> {
        let mut c = RunConfig::default();
        c.command = command.to_string();
        if let Some(f) = file {
            c.apply_file(f)?;
        }
        for (k, v) in flags {
            c.set(k, v)
                .map_err(|e| Error::Config(format!("flag --{}: {e}", k.replace('_', "-"))))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.seg_config()?;
        self.class_config()?;
        self.train_config(true)?.validate()?;
        self.infer_options()?.validate()?;
        if self.patch_strategy.is_empty() {
            return Err(Error::Config("patch_strategy lists no strategy".into()));
        }
        Ok(())
    }

    pub fn require<'a>(&self, key: &str, v: &'a Option<PathBuf>) -> Result<&'a Path> {
        v.as_deref().ok_or_else(|| {
            Error::Config(format!(
                "`{}` needs `{key}` (flag --{} or `{key} = ...` in the config file)",
                self.command,
                key.replace('_', "-")
            ))
        })
    }

    pub fn seg_config(&self) -> Result<SegConfig> {
        let c = SegConfig {
            base_width: self.base_width,
            attention_reduction: self.attention_reduction,
            variant: self.variant,
            use_batchnorm: self.use_batchnorm,
            gru_roles: self.gru_roles,
            ..SegConfig::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn class_config(&self) -> Result<ClassConfig> {
        let c = ClassConfig {
            stage_depths: self.class_depths,
            base_width: self.class_width,
            use_batchnorm: self.use_batchnorm,
        };
        c.validate()?;
        Ok(c)
    }

    /// `seg` selects the seed stream for the segmentation task.
    pub fn train_config(&self, seg: bool) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            decay_ratio: self.decay_ratio,
            decay_mode: self.decay_mode,
            max_steps: (self.max_steps > 0).then_some(self.max_steps),
            augment: self.augment,
            seed: if seg { self.seed } else { self.seed ^ 0x5EED },
        })
    }

    pub fn infer_options(&self) -> Result<InferOptions> {
        Ok(InferOptions {
            seg_threshold: self.seg_threshold,
            class_threshold: self.class_threshold,
            min_area: self.min_area,
            crop_size: self.crop_size,
            tile_window: self.tile_window,
            stage1_only: self.stage1_only,
            normalize_to: None,
        })
    }

    pub fn mine_options(&self) -> Result<InferOptions> {
        Ok(InferOptions {
            seg_threshold: self.mine_threshold,
            min_area: self.mine_min_area,
            ..self.infer_options()?
        })
    }

    pub fn patch_recipe(&self) -> SegPatchRecipe {
        SegPatchRecipe {
            patch: self.patch,
            centered: self.patch_strategy.contains(&PatchStrategy::MitosisCentered),
            jitter: self.jitter,
            random_per_image: if self.patch_strategy.contains(&PatchStrategy::Random) { self.random_per_image } else { 0 },
            sliding: self.patch_strategy.contains(&PatchStrategy::Sliding),
            overlap: self.overlap,
        }
    }

    /// Resolved values, one `key = value` line each, in table order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let b = |v: bool| v.to_string();
        KEYS.iter()
            .map(|(k, _, _)| {
                let v = match *k {
                    "data" => p(&self.data),
                    "out" => p(&self.out),
                    "image" => p(&self.image),
                    "truth" => p(&self.truth),
                    "pred" => p(&self.pred),
                    "checkpoint" => p(&self.checkpoint),
                    "seg_checkpoint" => p(&self.seg_checkpoint),
                    "class_checkpoint" => p(&self.class_checkpoint),
                    "profile" => p(&self.profile),
                    "reference_image" => p(&self.reference_image),
                    "normalize" => b(self.normalize),
                    "od_threshold" => self.od_threshold.to_string(),
                    "angle_percentile" => self.angle_percentile.to_string(),
                    "seg_threshold" => self.seg_threshold.to_string(),
                    "class_threshold" => self.class_threshold.to_string(),
                    "min_area" => self.min_area.to_string(),
                    "crop_size" => self.crop_size.to_string(),
                    "tile_window" => self.tile_window.to_string(),
                    "stage1_only" => b(self.stage1_only),
                    "match_radius" => self.match_radius.to_string(),
                    "variant" => self.variant.name().to_string(),
                    "base_width" => self.base_width.to_string(),
                    "attention_reduction" => self.attention_reduction.to_string(),
                    "use_batchnorm" => b(self.use_batchnorm),
                    "gru_roles" => match self.gru_roles {
                        GruRoles::EncoderInput => "encoder_input".into(),
                        GruRoles::DecoderInput => "decoder_input".into(),
                    },
                    "class_depths" => self.class_depths.map(|d| d.to_string()).join(","),
                    "class_width" => self.class_width.to_string(),
                    "epochs" => self.epochs.to_string(),
                    "batch_size" => self.batch_size.to_string(),
                    "lr" => self.lr.to_string(),
                    "decay_ratio" => self.decay_ratio.to_string(),
                    "decay_mode" => self.decay_mode.name().to_string(),
                    "max_steps" => self.max_steps.to_string(),
                    "augment" => b(self.augment),
                    "seed" => self.seed.to_string(),
                    "workers" => self.workers.to_string(),
                    "patch" => self.patch.to_string(),
                    "overlap" => self.overlap.to_string(),
                    "patch_strategy" => self
                        .patch_strategy
                        .iter()
                        .map(|s| match s {
                            PatchStrategy::Sliding => "sliding",
                            PatchStrategy::Random => "random",
                            PatchStrategy::MitosisCentered => "mitosis_centered",
                        })
                        .collect::<Vec<_>>()
                        .join(","),
                    "random_per_image" => self.random_per_image.to_string(),
                    "jitter" => self.jitter.to_string(),
                    "mine_threshold" => self.mine_threshold.to_string(),
                    "mine_min_area" => self.mine_min_area.to_string(),
                    "add_truth" => b(self.add_truth),
                    "synth_count" => self.synth_count.to_string(),
                    "synth_size" => self.synth_size.to_string(),
                    "ablate_steps" => self.ablate_steps.to_string(),
                    "box_size" => self.box_size.to_string(),
                    other => unreachable!("key `{other}` missing from echo"),
                };
                (k.to_string(), v)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::resolve("infer", None, &[]).unwrap();
        assert_eq!(c.seg_threshold, 0.5);
        assert_eq!(c.min_area, 100);
        assert_eq!(c.lr, 1e-4);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.variant, Variant::DscrbCsag);
    }

    #[test]
    fn flags_override_file() {
        let tmp = tempfile::tempdir().unwrap();
        let f = tmp.path().join("run.cfg");
        std::fs::write(&f, "# thresholds\nseg_threshold = 0.3\n").unwrap();
        let c = RunConfig::resolve("infer", Some(&f), &[]).unwrap();
        assert_eq!(c.seg_threshold, 0.3);
        let c = RunConfig::resolve("infer", Some(&f), &[("seg_threshold".into(), "0.6".into())]).unwrap();
        assert_eq!(c.seg_threshold, 0.6);
    }

    #[test]
    fn typo_names_line_and_nearest_key() {
        let mut c = RunConfig::default();
        let err = c.apply_text("seed = 1\nthresold = 0.2\n", "run.cfg").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("thresold"), "{err}");
        assert!(err.contains("seg_threshold"), "{err}");
    }

    #[test]
    fn bad_value_rejected() {
        let mut c = RunConfig::default();
        let err = c.apply_text("epochs = many\n", "f").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(c.apply_text("variant = unet\n", "f").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::resolve("x", None, &[("lr".into(), "0.003".into()), ("data".into(), "d".into())]).unwrap();
        let mut d = RunConfig::default();
        d.command = "x".into();
        for (k, v) in c.echo() {
            d.set(&k, &v).unwrap();
        }
        assert_eq!(c, d);
    }
}
