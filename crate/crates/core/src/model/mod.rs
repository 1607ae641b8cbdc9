//! A two-layer causal transformer with rotary attention, written out by
//! hand: forward pass, exact backward pass, AdamW and a teacher-forced
//! evaluator.
//!
//! Each block is pre-norm with scale-only RMS normalisation, causal
//! multi-head attention with RoPE on queries and keys, and a ReLU
//! feed-forward layer; a final RMS norm feeds an untied output projection.
//! Parameters and activations are generic over [`Scalar`] (`f32` for
//! training, `f64` for gradient checks); losses are accumulated in `f64`.

mod adamw;
mod eval;
mod linalg;
mod params;
mod rope_table;
mod train;
mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::scaling::ScalingSpec;

pub use adamw::AdamW;
pub use eval::{evaluate, EvalOptions, EvalReport, NextTokenModel, Transformer};
pub use linalg::{gemm, MatMut, MatRef, Scalar};
pub use params::{ParamLayout, ParamTensor, ParameterSet};
pub use rope_table::{PositionEncoder, RopeTable};
pub use train::{train, EpochMetrics, NoopObserver, RunMetrics, TrainConfig, TrainObserver, TrainSet};
pub use transformer::{forward, loss_and_grad, ForwardCache, LossAndGrad};

fn default_base() -> f64 {
    10000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Size of the precomputed rotary angle table.
    pub max_positions: usize,
    #[serde(default = "default_base")]
    pub rotary_base: f64,
    pub pe: ScalingSpec,
    /// Rebuild the angle table instead of failing on longer inputs.
    #[serde(default)]
    pub auto_extend_positions: bool,
}

impl ModelConfig {
    /// Two T5-Small-sized layers: 8 heads of 64, feed-forward 2048.
    pub fn t5_small(vocab_size: usize, pe: ScalingSpec) -> Self {
        Self::with_width(vocab_size, 8, 2048, pe)
    }

    /// Desk-scale variant: 2 heads of 64 (`d_model = 128`), feed-forward 512.
    pub fn reduced(vocab_size: usize, pe: ScalingSpec) -> Self {
        Self::with_width(vocab_size, 2, 512, pe)
    }

    fn with_width(vocab_size: usize, n_heads: usize, ffn_dim: usize, pe: ScalingSpec) -> Self {
        Self {
            n_layers: 2,
            d_model: n_heads * 64,
            n_heads,
            head_dim: 64,
            ffn_dim,
            vocab_size,
            max_positions: 256,
            rotary_base: default_base(),
            pe,
            auto_extend_positions: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.ffn_dim == 0 {
            return Err(invalid_arg!("layer, head and feed-forward sizes must be positive"));
        }
        if self.n_heads * self.head_dim != self.d_model {
            return Err(invalid_arg!(
                "n_heads ({}) x head_dim ({}) != d_model ({})",
                self.n_heads,
                self.head_dim,
                self.d_model
            ));
        }
        if self.head_dim == 0 || !self.head_dim.is_multiple_of(2) {
            return Err(invalid_arg!("head_dim must be a positive even integer"));
        }
        if self.vocab_size < 2 {
            return Err(invalid_arg!("vocab_size must be >= 2"));
        }
        if self.max_positions == 0 {
            return Err(invalid_arg!("max_positions must be positive"));
        }
        self.pe.validate()
    }
}
