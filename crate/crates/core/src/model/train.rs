use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adamw::AdamW;
use super::eval::{evaluate, EvalOptions, Transformer};
use super::params::ParameterSet;
use super::rope_table::PositionEncoder;
use super::transformer::loss_and_grad;
use super::ModelConfig;
use crate::error::{invalid_arg, Error, Result};
use crate::posgen::Token;
use crate::rng::{self, Purpose};

fn default_eval_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            weight_decay: 1e-2,
            batch_size: 128,
            epochs: 150,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            eval_batch_size: default_eval_batch(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.adam_epsilon];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(invalid_arg!("learning_rate and adam_epsilon must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid_arg!("weight_decay must be non-negative"));
        }
        for beta in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&beta) {
                return Err(invalid_arg!("Adam betas must lie in [0, 1), got {beta}"));
            }
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(invalid_arg!("batch sizes must be positive"));
        }
        Ok(())
    }
}

/// Training and validation sequences. All training sequences share one
/// length, as do all validation sequences.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a, S> {
    pub train: &'a [S],
    pub val: &'a [S],
    /// Targets before this position (the seed) are not scored.
    pub loss_mask_start: usize,
    /// Training length; validation positions at or past it are OOD.
    pub ood_threshold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ood_accuracy: f64,
    /// Seconds spent on the epoch, if the observer has a clock.
    pub wall_clock_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch of the returned (lowest validation loss) parameters.
    pub best_epoch: Option<usize>,
}

/// Hooks for progress reporting. The core has no clock of its own.
pub trait TrainObserver {
    /// Monotonic time in seconds.
    fn now(&mut self) -> Option<f64> {
        None
    }

    fn on_epoch(&mut self, _metrics: &EpochMetrics, _params: &ParameterSet<f32>) {}
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

fn uniform_length<S: AsRef<[Token]>>(seqs: &[S], what: &str) -> Result<usize> {
    let first = seqs.first().ok_or_else(|| invalid_arg!("{what} set is empty"))?;
    let len = first.as_ref().len();
    if seqs.iter().any(|s| s.as_ref().len() != len) {
        return Err(invalid_arg!("{what} sequences must share one length"));
    }
    Ok(len)
}

/// AdamW training with a per-epoch shuffle drawn from the run seed.
/// Returns the parameters of the epoch with the lowest validation loss.
pub fn train<S: AsRef<[Token]>, O: TrainObserver>(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    data: TrainSet<'_, S>,
    observer: &mut O,
) -> Result<(ParameterSet<f32>, RunMetrics)> {
    model_config.validate()?;
    train_config.validate()?;
    let seq_len = uniform_length(data.train, "training")?;
    uniform_length(data.val, "validation")?;

    let mut params = ParameterSet::<f32>::init(model_config, train_config.seed);
    let mut metrics = RunMetrics::default();
    if train_config.epochs == 0 {
        return Ok((params, metrics));
    }
    let mut encoder = PositionEncoder::<f32>::new(model_config)?;
    let mut optimiser = AdamW::new(
        &params,
        train_config.learning_rate,
        train_config.weight_decay,
        train_config.adam_beta1,
        train_config.adam_beta2,
        train_config.adam_epsilon,
    );
    let eval_options = EvalOptions {
        batch_size: train_config.eval_batch_size,
        ..EvalOptions::new(data.ood_threshold, data.loss_mask_start)
    };
    let mut best: Option<(f64, ParameterSet<f32>)> = None;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut tokens = Vec::with_capacity(train_config.batch_size * seq_len);

    for epoch in 1..=train_config.epochs {
        let started = observer.now();
        order.shuffle(&mut rng::stream(train_config.seed, Purpose::Shuffle, epoch as u64));
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(train_config.batch_size).enumerate() {
            tokens.clear();
            for &i in batch {
                tokens.extend_from_slice(data.train[i].as_ref());
            }
            let table = encoder.table_for(seq_len)?;
            let out = loss_and_grad(
                &params,
                model_config,
                table,
                &tokens,
                batch.len(),
                seq_len,
                data.loss_mask_start,
            )?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: out.loss });
            }
            loss_sum += out.loss * batch.len() as f64;
            optimiser.update(&mut params, &out.grads)?;
            if !params.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: out.loss });
            }
        }

        let mut model = Transformer::new(model_config, params)?;
        let report = evaluate(&mut model, data.val, &eval_options)?;
        params = model.into_params();
        let wall_clock_seconds = match (started, observer.now()) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        };
        let record = EpochMetrics {
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            val_loss: report.loss,
            val_ood_accuracy: report.ood_accuracy,
            wall_clock_seconds,
        };
        if !record.val_loss.is_finite() {
            return Err(Error::Diverged { epoch, step: 0, loss: record.val_loss });
        }
        if best.as_ref().is_none_or(|(loss, _)| record.val_loss < *loss) {
            best = Some((record.val_loss, params.clone()));
            metrics.best_epoch = Some(epoch);
        }
        observer.on_epoch(&record, &params);
        metrics.epochs.push(record);
    }
    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, metrics))
}
