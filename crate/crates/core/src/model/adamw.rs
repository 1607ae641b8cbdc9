use alloc::vec;
use alloc::vec::Vec;

use super::params::ParameterSet;
use super::Scalar;
use crate::error::{invalid_arg, Result};

/// Adam with decoupled weight decay. Decay is applied to weight matrices
/// only, never to normalisation gains.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<T>,
    second: Vec<T>,
    decay_mask: Vec<bool>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(
        params: &ParameterSet<T>,
        learning_rate: f64,
        weight_decay: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        let n = params.values().len();
        let mut decay_mask = vec![false; n];
        for t in params.layout().tensors() {
            decay_mask[t.range()].fill(t.is_matrix);
        }
        Self {
            learning_rate,
            weight_decay,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: vec![T::zero(); n],
            second: vec![T::zero(); n],
            decay_mask,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParameterSet<T>, grads: &ParameterSet<T>) -> Result<()> {
        if grads.values().len() != self.first.len() || params.values().len() != self.first.len() {
            return Err(invalid_arg!("gradient and parameter sizes differ from the optimiser state"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bias2 = 1.0 - libm::pow(self.beta2, t as f64);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step_size = T::of(self.learning_rate / bias1);
        let inv_sqrt_bias2 = T::of(1.0 / libm::sqrt(bias2));
        let eps = T::of(self.epsilon);
        let decay = T::of(self.learning_rate * self.weight_decay);

        let values = params.values_mut();
        for i in 0..values.len() {
            let g = grads.values()[i];
            let m = b1 * self.first[i] + one_b1 * g;
            let v = b2 * self.second[i] + one_b2 * g * g;
            self.first[i] = m;
            self.second[i] = v;
            let mut w = values[i];
            if self.decay_mask[i] {
                w = w - decay * w;
            }
            values[i] = w - step_size * m / ((v.sqrt() * inv_sqrt_bias2) + eps);
        }
        Ok(())
    }
}
