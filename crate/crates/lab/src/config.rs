use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use resonance_core::model::{ModelConfig, TrainConfig};
use resonance_core::posgen::{PosGenSpec, SemiVariant, Subtask};
use resonance_core::{ScalingMethod, ScalingSpec};
use serde::{Deserialize, Serialize};

/// PosGen settings shared by every cell of the grid; the subtask varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGrid {
    pub subtasks: Vec<Subtask>,
    pub j: usize,
    pub k: usize,
    pub modulus: u32,
    pub train_length: usize,
    pub eval_length: usize,
    #[serde(default)]
    pub semi_variant: SemiVariant,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl TaskGrid {
    pub fn spec(&self, subtask: Subtask) -> PosGenSpec {
        PosGenSpec {
            subtask,
            j: self.j,
            k: self.k,
            modulus: self.modulus,
            vocab_size: self.modulus,
            train_length: self.train_length,
            eval_length: self.eval_length,
            semi_variant: self.semi_variant,
        }
    }
}

/// Transformer size; vocabulary, position table and PE come from the task
/// and the scaling spec of each cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub rotary_base: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// d_model 512, 5 seeds, 150 epochs.
    Full,
    /// d_model 128, 3 seeds, 40 epochs.
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskGrid,
    pub model: ModelShape,
    /// `seed` is replaced by each cell's seed.
    pub train: TrainConfig,
    pub scaling_specs: Vec<ScalingSpec>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Worker count for the grid; 0 means one per available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub autoregressive_eval: bool,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let train_length = 64;
        let scale = 4.0;
        let scaling_specs = vec![
            ScalingSpec::rope(train_length),
            ScalingSpec::rope(train_length).with_resonance(true),
            ScalingSpec::yarn(scale, train_length),
            ScalingSpec::yarn(scale, train_length).with_resonance(true),
        ];
        let task = TaskGrid {
            subtasks: Subtask::ALL.to_vec(),
            j: 1,
            k: 3,
            modulus: 17,
            train_length,
            eval_length: 256,
            semi_variant: SemiVariant::Halved,
            n_train: 10_000,
            n_val: 1_000,
            n_test: 1_000,
        };
        let (n_heads, ffn_dim, epochs, seeds, dir) = match profile {
            Profile::Full => (8, 2048, 150, 5, "runs/full"),
            Profile::Reduced => (2, 512, 40, 3, "runs/reduced"),
        };
        Self {
            task,
            model: ModelShape {
                n_layers: 2,
                d_model: n_heads * 64,
                n_heads,
                head_dim: 64,
                ffn_dim,
                rotary_base: 10000.0,
            },
            train: TrainConfig { epochs, ..TrainConfig::default() },
            scaling_specs,
            seeds: (0..seeds).collect(),
            output_dir: PathBuf::from(dir),
            workers: 0,
            autoregressive_eval: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.scaling_specs.is_empty() {
            bail!("scaling_specs is empty");
        }
        if self.seeds.is_empty() {
            bail!("seeds is empty");
        }
        if self.task.subtasks.is_empty() {
            bail!("task.subtasks is empty");
        }
        let mut slugs: Vec<String> = self.scaling_specs.iter().map(spec_slug).collect();
        slugs.sort();
        if slugs.windows(2).any(|w| w[0] == w[1]) {
            bail!("scaling_specs contains duplicates");
        }
        for &subtask in &self.task.subtasks {
            self.task.spec(subtask).validate()?;
        }
        for spec in &self.scaling_specs {
            self.model_config(spec).validate()?;
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn model_config(&self, pe: &ScalingSpec) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_layers: m.n_layers,
            d_model: m.d_model,
            n_heads: m.n_heads,
            head_dim: m.head_dim,
            ffn_dim: m.ffn_dim,
            vocab_size: self.task.modulus as usize,
            max_positions: self.task.eval_length,
            rotary_base: m.rotary_base,
            pe: pe.clone(),
            auto_extend_positions: false,
        }
    }
}

/// Directory-safe name of a scaling spec, e.g. `yarn_s4_res`.
pub fn spec_slug(spec: &ScalingSpec) -> String {
    let mut slug = String::from(match spec.method {
        ScalingMethod::None => "rope",
        ScalingMethod::NtkAware => "ntk",
        ScalingMethod::DynamicNtk => "dynamic_ntk",
        ScalingMethod::Yarn => "yarn",
    });
    if spec.scale_factor != 1.0 {
        write!(slug, "_s{}", spec.scale_factor).unwrap();
    }
    if spec.method == ScalingMethod::Yarn && (spec.alpha, spec.beta) != (1.0, 32.0) {
        write!(slug, "_a{}_b{}", spec.alpha, spec.beta).unwrap();
    }
    if let Some(a) = spec.attention_scale {
        write!(slug, "_t{a}").unwrap();
    }
    if spec.resonance {
        slug.push_str(if spec.resonance_first { "_resfirst" } else { "_res" });
    }
    if spec.train_length != 64 {
        write!(slug, "_L{}", spec.train_length).unwrap();
    }
    slug.replace('.', "p")
}
