use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::ParameterSet;
use super::rope_table::PositionEncoder;
use super::transformer::{cross_entropy, forward};
use super::{ModelConfig, Scalar};
use crate::error::{invalid_arg, Result};
use crate::posgen::{ood_accuracy, Token};

/// Anything that scores next tokens for a batch of equal-length sequences.
pub trait NextTokenModel {
    fn vocab_size(&self) -> usize;

    /// Logits for every position, `batch x seq_len x vocab`, row-major. The
    /// row at position `t` predicts token `t + 1`.
    fn logits(&mut self, tokens: &[Token], batch: usize, seq_len: usize) -> Result<Vec<f64>>;
}

/// Parameters plus the position encoder they were trained with.
#[derive(Debug, Clone)]
pub struct Transformer<T> {
    params: ParameterSet<T>,
    config: ModelConfig,
    encoder: PositionEncoder<T>,
}

impl<T: Scalar> Transformer<T> {
    pub fn new(config: &ModelConfig, params: ParameterSet<T>) -> Result<Self> {
        if *params.layout() != super::ParamLayout::new(config) {
            return Err(invalid_arg!("parameter layout does not match the model config"));
        }
        Ok(Self { params, config: config.clone(), encoder: PositionEncoder::new(config)? })
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn into_params(self) -> ParameterSet<T> {
        self.params
    }
}

impl<T: Scalar> NextTokenModel for Transformer<T> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn logits(&mut self, tokens: &[Token], batch: usize, seq_len: usize) -> Result<Vec<f64>> {
        let table = self.encoder.table_for(seq_len)?;
        let cache = forward(&self.params, &self.config, table, tokens, batch, seq_len)?;
        Ok(cache.logits.iter().map(|x| x.f64()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Training length `L`; positions `>= threshold` count as OOD.
    pub threshold: usize,
    /// First predicted position (the seed length for PosGen).
    pub loss_mask_start: usize,
    pub batch_size: usize,
    /// Feed the model its own predictions past `threshold` instead of the
    /// gold prefix. Only ever lowers accuracy; kept for comparison.
    #[serde(default)]
    pub autoregressive: bool,
}

impl EvalOptions {
    pub fn new(threshold: usize, loss_mask_start: usize) -> Self {
        Self { threshold, loss_mask_start, batch_size: 64, autoregressive: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracy at positions `first_scored_position..seq_len`.
    pub per_position_accuracy: Vec<f64>,
    pub first_scored_position: usize,
    pub ood_accuracy: f64,
    /// Teacher-forced mean cross-entropy over scored targets.
    pub loss: f64,
    pub n_sequences: usize,
}

fn argmax(row: &[f64]) -> Token {
    let mut best = 0;
    for (i, &z) in row.iter().enumerate() {
        if z > row[best] {
            best = i;
        }
    }
    best as Token
}

/// Scores `sequences` position by position. Positions before
/// `loss_mask_start` are copied from the gold sequence; every later position
/// is the argmax of the logits one step earlier.
pub fn evaluate<M: NextTokenModel, S: AsRef<[Token]>>(
    model: &mut M,
    sequences: &[S],
    options: &EvalOptions,
) -> Result<EvalReport> {
    let first = sequences.first().ok_or_else(|| invalid_arg!("no sequences to evaluate"))?;
    let seq_len = first.as_ref().len();
    if sequences.iter().any(|s| s.as_ref().len() != seq_len) {
        return Err(invalid_arg!("evaluation sequences must share one length"));
    }
    if seq_len <= options.threshold {
        return Err(invalid_arg!(
            "sequences of {seq_len} tokens have no positions past {}",
            options.threshold
        ));
    }
    if options.loss_mask_start == 0 || options.loss_mask_start > options.threshold {
        return Err(invalid_arg!("loss_mask_start must lie in 1..=threshold"));
    }
    if options.batch_size == 0 {
        return Err(invalid_arg!("batch_size must be positive"));
    }
    let vocab = model.vocab_size();

    let mut predictions: Vec<Vec<Token>> = Vec::with_capacity(sequences.len());
    let mut loss_sum = 0.0;
    for chunk in sequences.chunks(options.batch_size) {
        let batch = chunk.len();
        let tokens: Vec<Token> = chunk.iter().flat_map(|s| s.as_ref().iter().copied()).collect();
        let logits = model.logits(&tokens, batch, seq_len)?;
        if logits.len() != batch * seq_len * vocab {
            return Err(invalid_arg!("model returned {} logits", logits.len()));
        }
        let (loss, _) = cross_entropy(&logits, &tokens, batch, seq_len, vocab, options.loss_mask_start)?;
        loss_sum += loss * batch as f64;

        let mut preds: Vec<Vec<Token>> = chunk
            .iter()
            .enumerate()
            .map(|(b, gold)| {
                let gold = gold.as_ref();
                let mut p = gold[..options.loss_mask_start].to_vec();
                p.extend((options.loss_mask_start..seq_len).map(|t| {
                    let row = (b * seq_len + t - 1) * vocab;
                    argmax(&logits[row..row + vocab])
                }));
                p
            })
            .collect();
        if options.autoregressive {
            generate_tail(model, &mut preds, options.threshold, seq_len, vocab)?;
        }
        predictions.extend(preds);
    }

    let golds: Vec<&[Token]> = sequences.iter().map(|s| s.as_ref()).collect();
    let per_position_accuracy = (options.loss_mask_start..seq_len)
        .map(|t| {
            let hits = predictions.iter().zip(&golds).filter(|(p, g)| p[t] == g[t]).count();
            hits as f64 / sequences.len() as f64
        })
        .collect();
    Ok(EvalReport {
        per_position_accuracy,
        first_scored_position: options.loss_mask_start,
        ood_accuracy: ood_accuracy(&predictions, &golds, options.threshold)?,
        loss: loss_sum / sequences.len() as f64,
        n_sequences: sequences.len(),
    })
}

/// Greedy continuation from position `start`, one forward pass per token.
fn generate_tail<M: NextTokenModel>(
    model: &mut M,
    preds: &mut [Vec<Token>],
    start: usize,
    seq_len: usize,
    vocab: usize,
) -> Result<()> {
    let batch = preds.len();
    // positions before `start` keep the gold prefix
    let mut current: Vec<Vec<Token>> = preds.iter().map(|p| p[..start].to_vec()).collect();
    for t in start..seq_len {
        let tokens: Vec<Token> = current.iter().flat_map(|p| p.iter().copied()).collect();
        let logits = model.logits(&tokens, batch, t)?;
        for (b, seq) in current.iter_mut().enumerate() {
            let row = (b * t + t - 1) * vocab;
            seq.push(argmax(&logits[row..row + vocab]));
        }
    }
    for (p, c) in preds.iter_mut().zip(current) {
        p[start..].copy_from_slice(&c[start..]);
    }
    Ok(())
}
