//! Command-line front end.
//!
//! Every tunable is a config key (`key = value` in a `--config` file) and a
//! flag (`--key-name value`). Flags win over the file, the file over the
//! defaults. Exit codes: 0 success, 1 usage, 2 data, 3 numeric failure.

pub mod config;
pub mod overlay;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};
use image::RgbImage;
use log::{info, warn};

use crate::classnet::ClassNet;
use crate::error::{Error, Result};
use crate::metrics::{csv_report, detection_metrics, text_report, Detection, Point};
use crate::ndcore::checkpoint::write_atomic;
use crate::pipeline::dataset::{self, Sample};
use crate::pipeline::train::StepInfo;
use crate::pipeline::*;
use crate::segnet::{SegNet, Variant};
use crate::stain::{estimate_stain_profile, normalize_stain, StainProfile};

pub use config::{RunConfig, KEYS};
pub use overlay::render_overlay;

const COMMANDS: &[(&str, &str)] = &[
    ("synth", "generate a synthetic dataset (needs --out)"),
    ("normalize", "stain-normalize a dataset or image (needs --data or --image, and --out)"),
    ("prep", "cut training patches from a dataset into a patch dataset (needs --data, --out)"),
    ("train-seg", "train the segmentation network (needs --data, --checkpoint)"),
    ("train-class", "train the candidate classifier (needs --data, --seg-checkpoint, --checkpoint)"),
    ("infer", "two-stage inference to a detection CSV (needs --seg-checkpoint, --class-checkpoint, --data or --image, --out)"),
    ("evaluate", "match detections against ground truth (needs --pred, and --truth or --data)"),
    ("overlay", "draw detections and ground truth on an image (needs --image, --pred, --out)"),
    ("ablate", "smoke-train all five segmentation variants and tabulate (needs --data)"),
];

pub fn command() -> Command {
    let mut cmd = Command::new("mitoseg")
        .about("Two-stage mitosis segmentation and candidate classification")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("`key = value` file; flags override it"),
        );
    for (k, d, h) in KEYS {
        let help = if d.is_empty() { h.to_string() } else { format!("{h} [default: {d}]") };
        cmd = cmd.arg(
            Arg::new(*k)
                .long(k.replace('_', "-"))
                .global(true)
                .value_name("VALUE")
                .help(help),
        );
    }
    for (name, about) in COMMANDS {
        cmd = cmd.subcommand(Command::new(*name).about(*about));
    }
    cmd
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, rec| writeln!(buf, "{} {}", rec.level(), rec.args()))
        .try_init();
}

/// Parses `args` (program name first), runs the command, returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match resolve(name, sub).and_then(|cfg| dispatch(&cfg)) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e} exit_code={}", e.exit_code());
            e.exit_code()
        }
    }
}

fn resolve(name: &str, m: &ArgMatches) -> Result<RunConfig> {
    let file = m.get_one::<String>("config").map(PathBuf::from);
    let flags: Vec<(String, String)> = KEYS
        .iter()
        .filter(|(k, _, _)| m.value_source(k) == Some(ValueSource::CommandLine))
        .filter_map(|(k, _, _)| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    let cfg = RunConfig::resolve(name, file.as_deref(), &flags)?;
    for (k, v) in cfg.echo() {
        info!("config key={k} value={v}");
    }
    if cfg.workers > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    Ok(cfg)
}

pub fn dispatch(cfg: &RunConfig) -> Result<()> {
    let t = Instant::now();
    match cfg.command.as_str() {
        "synth" => cmd_synth(cfg),
        "normalize" => cmd_normalize(cfg),
        "prep" => cmd_prep(cfg),
        "train-seg" => cmd_train_seg(cfg),
        "train-class" => cmd_train_class(cfg),
        "infer" => cmd_infer(cfg),
        "evaluate" => cmd_evaluate(cfg),
        "overlay" => cmd_overlay(cfg),
        "ablate" => cmd_ablate(cfg),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }?;
    info!("done command={} seconds={:.1}", cfg.command, t.elapsed().as_secs_f64());
    Ok(())
}

/// Held for the duration of a training run; refuses a second run on the
/// same checkpoint path.
pub struct TrainLock(PathBuf);

impl TrainLock {
    pub fn acquire(checkpoint: &Path) -> Result<Self> {
        let mut s = checkpoint.as_os_str().to_owned();
        s.push(".lock");
        let path = PathBuf::from(s);
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(TrainLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "{} exists: another training run holds this checkpoint (remove the file if it is stale)",
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for TrainLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn target_profile(cfg: &RunConfig) -> Result<StainProfile> {
    if let Some(img) = &cfg.reference_image {
        estimate_stain_profile(&dataset::load_rgb(img)?, cfg.od_threshold, cfg.angle_percentile)
    } else if let Some(p) = &cfg.profile {
        StainProfile::load(p)
    } else {
        Ok(StainProfile::reference())
    }
}

fn normalize_one(cfg: &RunConfig, img: &RgbImage, target: &StainProfile) -> Result<RgbImage> {
    let src = estimate_stain_profile(img, cfg.od_threshold, cfg.angle_percentile)?;
    normalize_stain(img, &src, target)
}

/// Dataset samples, stain-normalized when requested. Images without enough
/// tissue are skipped with a warning.
fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    let dir = cfg.require("data", &cfg.data)?;
    let mut samples = dataset::read_dataset(dir)?;
    info!("dataset path={} images={}", dir.display(), samples.len());
    if cfg.normalize {
        let target = target_profile(cfg)?;
        let mut kept = Vec::with_capacity(samples.len());
        for mut s in samples {
            match normalize_one(cfg, &s.image, &target) {
                Ok(img) => {
                    s.image = img;
                    kept.push(s);
                }
                Err(e @ Error::InsufficientTissue { .. }) => warn!("skipped image={} reason=\"{e}\"", s.id),
                Err(e) => return Err(e),
            }
        }
        samples = kept;
    }
    Ok(samples)
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require("out", &cfg.out)?;
    let sc = SynthConfig {
        image_size: cfg.synth_size,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&sc, cfg.synth_count, cfg.seed)?;
    for w in &ds.warnings {
        warn!("synth {w}");
    }
    dataset::write_dataset(out, &ds.images)?;
    let mitoses: usize = ds.images.iter().map(|s| s.centroids.len()).sum();
    info!("synth images={} mitoses={mitoses} out={}", ds.images.len(), out.display());
    Ok(())
}

fn cmd_normalize(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require("out", &cfg.out)?;
    let target = target_profile(cfg)?;
    info!("normalize target=\"{target}\"");
    if let Some(img_path) = &cfg.image {
        let img = dataset::load_rgb(img_path)?;
        let n = normalize_one(cfg, &img, &target)?;
        return dataset::save_png(out, &n);
    }
    let dir = cfg.require("data", &cfg.data)?;
    let ids = dataset::image_ids(dir)?;
    let results: Vec<(String, Result<RgbImage>)> = {
        use rayon::prelude::*;
        ids.par_iter()
            .map(|id| (id.clone(), dataset::load_rgb(&dataset::image_path(dir, id)).and_then(|i| normalize_one(cfg, &i, &target))))
            .collect()
    };
    let mut written = 0;
    for (id, r) in results {
        match r {
            Ok(img) => {
                dataset::save_png(&dataset::image_path(out, &id), &img)?;
                let m = dataset::mask_path(dir, &id);
                if m.exists() {
                    dataset::save_png(&dataset::mask_path(out, &id), &dataset::load_gray(&m)?)?;
                }
                written += 1;
            }
            Err(e @ Error::InsufficientTissue { .. }) => warn!("skipped image={id} reason=\"{e}\""),
            Err(e) => return Err(e),
        }
    }
    let c = dir.join("centroids.csv");
    if c.exists() {
        let bytes = std::fs::read(&c).map_err(|e| Error::io(&c, e))?;
        write_atomic(&out.join("centroids.csv"), &bytes)?;
    }
    if written == 0 {
        return Err(Error::Data("no image had enough tissue to normalize".into()));
    }
    info!("normalize images={written} out={}", out.display());
    Ok(())
}

fn cmd_prep(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require("out", &cfg.out)?;
    let samples = load_samples(cfg)?;
    let mut n = 0;
    for (i, s) in samples.iter().enumerate() {
        let patches = seg_patches(std::slice::from_ref(s), &cfg.patch_recipe(), cfg.seed.wrapping_add(i as u64))?;
        for (k, (p, m)) in patches.iter().enumerate() {
            let id = format!("{}_{k:03}", s.id);
            dataset::save_png(&dataset::image_path(out, &id), p)?;
            dataset::save_png(&dataset::mask_path(out, &id), m)?;
            n += 1;
        }
    }
    info!("prep patches={n} out={}", out.display());
    Ok(())
}

fn step_logger(task: &'static str, every: usize) -> impl FnMut(StepInfo) {
    move |s: StepInfo| {
        if s.step % every == 0 {
            info!("train task={task} step={} epoch={} lr={:e} loss={:.6}", s.step, s.epoch, s.lr, s.loss);
        }
    }
}

fn write_loss_log(checkpoint: &Path, log: &TrainLog) -> Result<()> {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".loss.csv");
    let mut text = String::from("step,lr,loss\n");
    for (i, (l, lr)) in log.losses.iter().zip(&log.lrs).enumerate() {
        text.push_str(&format!("{i},{lr:e},{l:.8}\n"));
    }
    write_atomic(Path::new(&s), text.as_bytes())
}

fn cmd_train_seg(cfg: &RunConfig) -> Result<()> {
    let ckpt = cfg.require("checkpoint", &cfg.checkpoint)?;
    let _lock = TrainLock::acquire(ckpt)?;
    let samples = load_samples(cfg)?;
    let patches = seg_patches(&samples, &cfg.patch_recipe(), cfg.seed)?;
    info!("train-seg patches={} patch={}", patches.len(), cfg.patch);
    let net = SegNet::<f32>::new(cfg.seg_config()?, cfg.seed)?;
    info!("train-seg params={}", net.manifest().total);
    let log = train_segmentation(&net, &patches, &cfg.train_config(true)?, step_logger("seg", 10))?;
    save_segnet(ckpt, &net)?;
    write_loss_log(ckpt, &log)?;
    info!(
        "train-seg steps={} final_loss={:.6} checkpoint={}",
        log.losses.len(),
        log.losses.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

fn cmd_train_class(cfg: &RunConfig) -> Result<()> {
    let ckpt = cfg.require("checkpoint", &cfg.checkpoint)?;
    let seg = load_segnet(cfg.require("seg_checkpoint", &cfg.seg_checkpoint)?)?;
    let _lock = TrainLock::acquire(ckpt)?;
    let samples = load_samples(cfg)?;
    let tiled = TiledSegmenter {
        model: &seg,
        window: cfg.tile_window,
    };
    let crops = class_samples(&samples, &tiled, &cfg.mine_options()?, cfg.match_radius, cfg.add_truth)?;
    let pos = crops.iter().filter(|c| c.1).count();
    info!("train-class samples={} positives={pos} negatives={}", crops.len(), crops.len() - pos);
    let net = ClassNet::<f32>::new(cfg.class_config()?, cfg.seed)?;
    let log = train_classifier(&net, &crops, &cfg.train_config(false)?, step_logger("class", 10))?;
    save_classnet(ckpt, &net)?;
    write_loss_log(ckpt, &log)?;
    info!(
        "train-class steps={} final_loss={:.6} checkpoint={}",
        log.losses.len(),
        log.losses.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

fn input_images(cfg: &RunConfig) -> Result<Vec<(String, PathBuf)>> {
    if let Some(p) = &cfg.image {
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(id, p.clone())]);
    }
    let dir = cfg.require("data", &cfg.data)?;
    Ok(dataset::image_ids(dir)?
        .into_iter()
        .map(|id| {
            let p = dataset::image_path(dir, &id);
            (id, p)
        })
        .collect())
}

fn cmd_infer(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require("out", &cfg.out)?;
    // Models first, so a bad checkpoint fails before any image is read.
    let seg = load_segnet(cfg.require("seg_checkpoint", &cfg.seg_checkpoint)?)?;
    let cls = if cfg.stage1_only {
        None
    } else {
        Some(load_classnet(cfg.require("class_checkpoint", &cfg.class_checkpoint)?)?)
    };
    let opts = cfg.infer_options()?;
    let target = if cfg.normalize { Some(target_profile(cfg)?) } else { None };
    let tiled = TiledSegmenter {
        model: &seg,
        window: cfg.tile_window,
    };
    let inputs = input_images(cfg)?;
    let mut rows: Vec<(String, Detection)> = Vec::new();
    let mut done = 0;
    for (id, path) in &inputs {
        let img = dataset::load_rgb(path)?;
        let res = match &target {
            Some(t) => normalize_one(cfg, &img, t),
            None => Ok(img),
        };
        let cls = cls.as_ref().map(|c| c as &dyn CandidateClassifier);
        match res.and_then(|img| run_two_stage(&img, &tiled, cls, &opts)) {
            Ok(dets) => {
                info!("infer image={id} detections={}", dets.len());
                rows.extend(dets.into_iter().map(|d| (id.clone(), d)));
                done += 1;
            }
            Err(e @ Error::InsufficientTissue { .. }) => warn!("skipped image={id} reason=\"{e}\""),
            Err(e) => return Err(e),
        }
    }
    dataset::write_detections(out, &rows)?;
    info!("infer images={done} skipped={} detections={} out={}", inputs.len() - done, rows.len(), out.display());
    Ok(())
}

fn truth_path(cfg: &RunConfig) -> Result<PathBuf> {
    match (&cfg.truth, &cfg.data) {
        (Some(t), _) => Ok(t.clone()),
        (None, Some(d)) => Ok(d.join("centroids.csv")),
        (None, None) => cfg.require("truth", &cfg.truth).map(Path::to_path_buf),
    }
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let preds = dataset::read_detections(cfg.require("pred", &cfg.pred)?)?;
    let truth = dataset::read_centroids(&truth_path(cfg)?)?;
    let counts = evaluate(&preds, &truth, cfg.match_radius)?;
    let m = detection_metrics(counts);
    print!("{}", text_report("evaluate", counts, m));
    info!(
        "evaluate precision={:.4} recall={:.4} f_score={:.4} tp={} fp={} fn={}",
        m.precision, m.recall, m.f_score, counts.tp, counts.fp, counts.fn_
    );
    if let Some(out) = &cfg.out {
        write_atomic(out, csv_report(counts, m).as_bytes())?;
    }
    Ok(())
}

fn cmd_overlay(cfg: &RunConfig) -> Result<()> {
    let img_path = cfg.require("image", &cfg.image)?;
    let out = cfg.require("out", &cfg.out)?;
    let img = dataset::load_rgb(img_path)?;
    let id = img_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let preds = dataset::read_detections(cfg.require("pred", &cfg.pred)?)?;
    let dets: Vec<Point> = preds.get(&id).map(|v| v.iter().map(|d| d.centroid).collect()).unwrap_or_default();
    let truth: Vec<Point> = match &cfg.truth {
        Some(t) => dataset::read_centroids(t)?.remove(&id).unwrap_or_default(),
        None => Vec::new(),
    };
    dataset::save_png(out, &render_overlay(&img, &dets, &truth, cfg.box_size))?;
    info!("overlay image={id} detections={} truth={} out={}", dets.len(), truth.len(), out.display());
    Ok(())
}

/// One row of the ablation table.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub final_loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

pub const ABLATION_COLUMNS: [&str; 5] = ["DSC", "CBAM", "GRU", "DSCRB", "CSAG"];

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("| Variant | ");
    s.push_str(&ABLATION_COLUMNS.join(" | "));
    s.push_str(" | Precision | Recall | F-score | Final loss | Params |\n|---|");
    s.push_str(&"---|".repeat(ABLATION_COLUMNS.len() + 5));
    s.push('\n');
    for r in rows {
        let flags: Vec<&str> = r.variant.module_flags().iter().map(|&f| if f { "x" } else { " " }).collect();
        s.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {} |\n",
            r.variant.name(),
            flags.join(" | "),
            r.precision,
            r.recall,
            r.f_score,
            r.final_loss,
            r.params
        ));
    }
    s
}

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let samples = load_samples(cfg)?;
    let patches = seg_patches(&samples, &cfg.patch_recipe(), cfg.seed)?;
    let truth: BTreeMap<String, Vec<Point>> = samples.iter().map(|s| (s.id.clone(), s.centroids.clone())).collect();
    let images: Vec<(String, RgbImage)> = samples.iter().map(|s| (s.id.clone(), s.image.clone())).collect();
    let tc = TrainConfig {
        max_steps: Some(cfg.ablate_steps),
        epochs: cfg.ablate_steps.max(1),
        ..cfg.train_config(true)?
    };
    let opts = InferOptions {
        stage1_only: true,
        ..cfg.infer_options()?
    };
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let net = SegNet::<f32>::new(
            crate::segnet::SegConfig {
                variant: v,
                ..cfg.seg_config()?
            },
            cfg.seed,
        )?;
        let log = train_segmentation(&net, &patches, &tc, |_| {})?;
        let tiled = TiledSegmenter {
            model: &net,
            window: cfg.tile_window,
        };
        let mut preds = BTreeMap::new();
        for (id, r) in infer_images(&images, &tiled, None, &opts) {
            preds.insert(id, r?);
        }
        let m = detection_metrics(evaluate(&preds, &truth, cfg.match_radius)?);
        let row = AblationRow {
            variant: v,
            params: net.manifest().total,
            final_loss: log.losses.last().copied().unwrap_or(f64::NAN),
            precision: m.precision,
            recall: m.recall,
            f_score: m.f_score,
        };
        info!(
            "ablate variant={} steps={} final_loss={:.6} precision={:.4} recall={:.4} f_score={:.4}",
            v.name(),
            log.losses.len(),
            row.final_loss,
            row.precision,
            row.recall,
            row.f_score
        );
        rows.push(row);
    }
    let table = ablation_table(&rows);
    print!("{table}");
    if let Some(out) = &cfg.out {
        write_atomic(out, table.as_bytes())?;
    }
    Ok(())
}
