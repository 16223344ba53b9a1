//! Residual candidate classifier over 128×128 crops.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::ndcore::ops::{add, bilinear_resize, global_avg_pool, linear, max_pool2d, relu, sigmoid};
use crate::ndcore::{Element, Init, NoGradGuard, ParamManifest, ParamStore, Tensor};
use crate::nn::{ConvUnit, Mode};

pub const INPUT_SIZE: usize = 128;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassConfig {
    /// Basic residual blocks per stage.
    pub stage_depths: [usize; 4],
    pub base_width: usize,
    pub use_batchnorm: bool,
}

impl Default for ClassConfig {
    fn default() -> Self {
        ClassConfig {
            stage_depths: [3, 4, 6, 3],
            base_width: 16,
            use_batchnorm: true,
        }
    }
}

impl ClassConfig {
    /// One block per stage.
    pub fn desk() -> Self {
        ClassConfig {
            stage_depths: [1, 1, 1, 1],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.stage_depths.iter().find(|&&d| d < 1) {
            return Err(Error::Config(format!("stage depths must be at least 1, got {d}")));
        }
        if self.base_width == 0 {
            return Err(Error::Config("classifier base_width must be positive".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let d = self.stage_depths.map(|v| v.to_string()).join(",");
        vec![
            ("model".into(), "classnet".into()),
            ("stage_depths".into(), d),
            ("base_width".into(), self.base_width.to_string()),
            ("use_batchnorm".into(), self.use_batchnorm.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut c = ClassConfig::default();
        for (k, v) in pairs {
            match k.as_str() {
                "model" if v != "classnet" => {
                    return Err(Error::Config(format!("checkpoint holds a `{v}` model, not classnet")))
                }
                "model" => {}
                "stage_depths" => c.stage_depths = parse_depths(v)?,
                "base_width" => {
                    c.base_width = v.parse().map_err(|_| Error::Config(format!("bad base_width `{v}`")))?
                }
                "use_batchnorm" => {
                    c.use_batchnorm = v.parse().map_err(|_| Error::Config(format!("bad use_batchnorm `{v}`")))?
                }
                other => return Err(Error::Config(format!("unknown classnet config key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn parse_depths(s: &str) -> Result<[usize; 4]> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("stage depths `{s}` must be four integers")))?;
    <[usize; 4]>::try_from(parts).map_err(|_| Error::Config(format!("stage depths `{s}` must have four entries")))
}

#[derive(Debug, Clone)]
pub struct BasicBlock<T: Element = f32> {
    pub conv1: ConvUnit<T>,
    pub conv2: ConvUnit<T>,
    pub shortcut: Option<ConvUnit<T>>,
}

impl<T: Element> BasicBlock<T> {
    fn new(ps: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, stride: usize, bn: bool) -> Result<Self> {
        Ok(BasicBlock {
            conv1: ConvUnit::plain(ps, &format!("{name}.conv1"), c_in, c_out, 3, stride, bn)?,
            conv2: ConvUnit::plain(ps, &format!("{name}.conv2"), c_out, c_out, 3, 1, bn)?,
            shortcut: if stride != 1 || c_in != c_out {
                Some(ConvUnit::plain(ps, &format!("{name}.shortcut"), c_in, c_out, 1, stride, bn)?)
            } else {
                None
            },
        })
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = self.conv2.forward(&self.conv1.forward_relu(x, mode)?, mode)?;
        let s = match &self.shortcut {
            Some(sc) => sc.forward(x, mode)?,
            None => x.clone(),
        };
        Ok(relu(&add(&h, &s)?))
    }
}

/// 7×7/2 stem, 3×3/2 max pool, four residual stages, global average pool,
/// linear, sigmoid.
#[derive(Debug)]
pub struct ClassNet<T: Element = f32> {
    pub config: ClassConfig,
    pub store: ParamStore<T>,
    pub stem: ConvUnit<T>,
    pub stages: Vec<Vec<BasicBlock<T>>>,
    pub fc_weight: Tensor<T>,
    pub fc_bias: Tensor<T>,
}

impl<T: Element> ClassNet<T> {
    pub fn new(config: ClassConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new(seed);
        let bn = config.use_batchnorm;
        let b = config.base_width;
        let stem = ConvUnit::plain(&mut ps, "stem", 3, b, 7, 2, bn)?;
        let mut stages = Vec::new();
        let mut c_in = b;
        for (s, &depth) in config.stage_depths.iter().enumerate() {
            let c_out = b << s;
            let mut blocks = Vec::with_capacity(depth);
            for i in 0..depth {
                let stride = if s > 0 && i == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(&mut ps, &format!("stage{}.{}", s + 1, i), c_in, c_out, stride, bn)?);
                c_in = c_out;
            }
            stages.push(blocks);
        }
        let fc_weight = ps.param("fc.weight", &[1, c_in], Init::Normal((1.0 / c_in as f64).sqrt()))?;
        let fc_bias = ps.param("fc.bias", &[1], Init::Zeros)?;
        Ok(ClassNet {
            config,
            store: ps,
            stem,
            stages,
            fc_weight,
            fc_bias,
        })
    }

    /// N×3×128×128 → N×1 probabilities.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h != INPUT_SIZE || w != INPUT_SIZE {
            return Err(crate::error::shape_err!(
                "classifier expects N×3×{INPUT_SIZE}×{INPUT_SIZE}, got {:?}",
                x.shape()
            ));
        }
        let mut h = max_pool2d(&self.stem.forward_relu(x, mode)?, 3, 2, 1)?;
        for stage in &self.stages {
            for block in stage {
                h = block.forward(&h, mode)?;
            }
        }
        let pooled = global_avg_pool(&h)?;
        Ok(sigmoid(&linear(&pooled, &self.fc_weight, Some(&self.fc_bias))?))
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let _g = NoGradGuard::new();
        self.forward(x, Mode::Eval)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.store.params()
    }

    pub fn manifest(&self) -> ParamManifest {
        self.store.manifest()
    }
}

/// RGB crop to a 1×3×128×128 tensor with values in [0, 1].
pub fn crop_to_input<T: Element>(crop: &RgbImage) -> Result<Tensor<T>> {
    let (w, h) = (crop.width() as usize, crop.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Data(format!("empty candidate crop ({w}×{h})")));
    }
    let mut planes = vec![T::zero(); 3 * h * w];
    for (x, y, px) in crop.enumerate_pixels() {
        for c in 0..3 {
            planes[c * h * w + y as usize * w + x as usize] = T::lit(px[c] as f64 / 255.0);
        }
    }
    let t = Tensor::from_vec(planes, &[1, 3, h, w])?;
    if (h, w) == (INPUT_SIZE, INPUT_SIZE) {
        return Ok(t);
    }
    let _g = NoGradGuard::new();
    bilinear_resize(&t, INPUT_SIZE, INPUT_SIZE)
}

/// Stack single-sample tensors along the batch axis.
pub fn stack<T: Element>(items: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = items.first().ok_or_else(|| Error::Data("cannot stack zero samples".into()))?;
    let per = first.numel();
    let mut data = Vec::with_capacity(per * items.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(crate::error::shape_err!("stack: {:?} vs {:?}", t.shape(), first.shape()));
        }
        data.extend_from_slice(&t.data());
    }
    let mut shape = first.shape().to_vec();
    shape[0] *= items.len();
    Tensor::from_vec(data, &shape)
}

/// One probability (or per-sample error) for each crop, in input order.
pub fn classify_candidates<T: Element>(model: &ClassNet<T>, samples: &[RgbImage]) -> Vec<Result<f64>> {
    classify_inputs(model, samples.iter().map(crop_to_input).collect())
}

/// Same as [`classify_candidates`] over already-converted 1×3×128×128 inputs.
pub fn classify_inputs<T: Element>(model: &ClassNet<T>, inputs: Vec<Result<Tensor<T>>>) -> Vec<Result<f64>> {
    const BATCH: usize = 32;
    let n = inputs.len();
    let mut out: Vec<Result<f64>> = Vec::with_capacity(n);
    let mut pending: Vec<(usize, Tensor<T>)> = Vec::new();
    let mut slots: Vec<Option<Result<f64>>> = Vec::with_capacity(n);
    for (i, r) in inputs.into_iter().enumerate() {
        match r {
            Ok(t) => {
                pending.push((i, t));
                slots.push(None);
            }
            Err(e) => slots.push(Some(Err(e))),
        }
    }
    for chunk in pending.chunks(BATCH) {
        let tensors: Vec<Tensor<T>> = chunk.iter().map(|(_, t)| t.clone()).collect();
        let res = stack(&tensors).and_then(|b| model.predict(&b));
        match res {
            Ok(p) => {
                let pv = p.to_vec();
                for ((i, _), v) in chunk.iter().zip(pv) {
                    slots[*i] = Some(Ok(v.as_f64()));
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for (i, _) in chunk {
                    slots[*i] = Some(Err(Error::Numeric(msg.clone())));
                }
            }
        }
    }
    out.extend(slots.into_iter().map(|s| s.expect("every slot filled")));
    out
}
