use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Scalar};
use crate::error::{invalid_arg, Result};
use crate::rng::{self, Purpose};

/// One named tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamTensor {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// Matrices get weight decay and N(0, 0.02) init; norm gains neither.
    pub is_matrix: bool,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ffn_norm: usize,
    pub w1: usize,
    pub w2: usize,
}

/// Order and shapes of all parameters. Weight matrices are stored
/// `in x out`, so a layer computes `y = x W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    tensors: Vec<ParamTensor>,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) tok_emb: usize,
    pub(crate) final_norm: usize,
    pub(crate) lm_head: usize,
    len: usize,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let (d, f, v) = (config.d_model, config.ffn_dim, config.vocab_size);
        let mut tensors = Vec::new();
        let mut next = 0;
        let mut push = |name: String, rows: usize, cols: usize, is_matrix: bool| {
            let offset = next;
            next += rows * cols;
            tensors.push(ParamTensor { name, offset, rows, cols, is_matrix });
            offset
        };
        let tok_emb = push("tok_emb".into(), v, d, true);
        let layers = (0..config.n_layers)
            .map(|l| LayerOffsets {
                attn_norm: push(format!("layers.{l}.attn_norm"), 1, d, false),
                wq: push(format!("layers.{l}.wq"), d, d, true),
                wk: push(format!("layers.{l}.wk"), d, d, true),
                wv: push(format!("layers.{l}.wv"), d, d, true),
                wo: push(format!("layers.{l}.wo"), d, d, true),
                ffn_norm: push(format!("layers.{l}.ffn_norm"), 1, d, false),
                w1: push(format!("layers.{l}.w1"), d, f, true),
                w2: push(format!("layers.{l}.w2"), f, d, true),
            })
            .collect();
        let final_norm = push("final_norm".into(), 1, d, false);
        let lm_head = push("lm_head".into(), d, v, true);
        Self { tensors, layers, tok_emb, final_norm, lm_head, len: next }
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// All trainable values in one flat buffer, in [`ParamLayout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    layout: ParamLayout,
    values: Vec<T>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let layout = ParamLayout::new(config);
        let values = alloc::vec![T::zero(); layout.len()];
        Self { layout, values }
    }

    /// Matrices ~ N(0, 0.02), normalisation gains = 1.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut params = Self::zeros(config);
        let mut rng = rng::stream(seed, Purpose::Init, 0);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        for t in params.layout.tensors.clone() {
            for x in &mut params.values[t.range()] {
                *x = if t.is_matrix { T::of(normal.sample(&mut rng)) } else { T::one() };
            }
        }
        params
    }

    pub fn from_values(config: &ModelConfig, values: Vec<T>) -> Result<Self> {
        let layout = ParamLayout::new(config);
        if values.len() != layout.len() {
            return Err(invalid_arg!(
                "expected {} parameter values, got {}",
                layout.len(),
                values.len()
            ));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|t| &self.values[t.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Lossless conversion to another precision, e.g. for gradient checks.
    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            layout: self.layout.clone(),
            values: self.values.iter().map(|x| U::of(x.f64())).collect(),
        }
    }

    pub(crate) fn slice(&self, offset: usize, len: usize) -> &[T] {
        &self.values[offset..offset + len]
    }
}
