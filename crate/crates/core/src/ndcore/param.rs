use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ndcore::element::Element;
use crate::ndcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// He-normal with std `sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    /// Normal with a fixed std.
    Normal(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Trained by the optimizer.
    Param,
    /// Persisted state that is not trained (running statistics).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Entry<T: Element> {
    pub name: String,
    pub role: Role,
    pub tensor: Tensor<T>,
}

/// Named registry of every parameter and buffer of a model, in creation
/// order. Creation order is deterministic, so a seed fixes all weights.
#[derive(Debug)]
pub struct ParamStore<T: Element = f32> {
    entries: Vec<Entry<T>>,
    names: HashSet<String>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestLine {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamManifest {
    pub layers: Vec<ManifestLine>,
    pub total: usize,
}

impl ParamManifest {
    /// Sum of counts whose name starts with `prefix`.
    pub fn total_with_prefix(&self, prefix: &str) -> usize {
        self.layers
            .iter()
            .filter(|l| l.name.starts_with(prefix))
            .map(|l| l.count)
            .sum()
    }

    pub fn get(&self, name: &str) -> Option<&ManifestLine> {
        self.layers.iter().find(|l| l.name == name)
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            entries: Vec::new(),
            names: HashSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn register(&mut self, name: &str, role: Role, data: Vec<T>, shape: &[usize]) -> Result<Tensor<T>> {
        if !self.names.insert(name.to_string()) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let tensor = match role {
            Role::Param => Tensor::parameter(data, shape)?,
            Role::Buffer => Tensor::from_vec(data, shape)?,
        };
        self.entries.push(Entry {
            name: name.to_string(),
            role,
            tensor: tensor.clone(),
        });
        Ok(tensor)
    }

    fn fill(&mut self, n: usize, init: Init) -> Vec<T> {
        match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Constant(c) => vec![T::lit(c); n],
            Init::HeNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let d = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| T::lit(d.sample(&mut self.rng))).collect()
            }
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| T::lit(d.sample(&mut self.rng))).collect()
            }
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor<T>> {
        let data = self.fill(shape.iter().product(), init);
        self.register(name, Role::Param, data, shape)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor<T>> {
        let data = vec![T::lit(value); shape.iter().product()];
        self.register(name, Role::Buffer, data, shape)
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    /// Trainable tensors in creation order.
    pub fn params(&self) -> Vec<Tensor<T>> {
        self.entries
            .iter()
            .filter(|e| e.role == Role::Param)
            .map(|e| e.tensor.clone())
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    /// Trainable parameter accounting; buffers are excluded.
    pub fn manifest(&self) -> ParamManifest {
        let layers: Vec<ManifestLine> = self
            .entries
            .iter()
            .filter(|e| e.role == Role::Param)
            .map(|e| ManifestLine {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                count: e.tensor.numel(),
            })
            .collect();
        let total = layers.iter().map(|l| l.count).sum();
        ParamManifest { layers, total }
    }

    pub fn zero_grads(&self) {
        self.entries.iter().for_each(|e| e.tensor.zero_grad());
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.all_finite())
    }
}
