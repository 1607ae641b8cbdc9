use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{ModelConfig, Scalar};
use crate::error::{invalid_arg, Result};
use crate::rope::ThetaSchedule;
use crate::scaling::{compose_for_length, ScalingMethod};

/// Precomputed `cos`/`sin` of every (position, pair) angle of a schedule.
///
/// Angles come from [`ThetaSchedule::angle`] in `f64` and are rounded to
/// the activation type only at the end.
#[derive(Debug, Clone)]
pub struct RopeTable<T> {
    schedule: ThetaSchedule,
    positions: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> RopeTable<T> {
    pub fn new(schedule: &ThetaSchedule, positions: usize) -> Self {
        let pairs = schedule.pairs();
        let mut cos = Vec::with_capacity(positions * pairs);
        let mut sin = Vec::with_capacity(positions * pairs);
        for m in 0..positions as u64 {
            for j in 0..pairs {
                let (s, c) = libm::sincos(schedule.angle(j, m));
                cos.push(T::of(c));
                sin.push(T::of(s));
            }
        }
        Self { schedule: schedule.clone(), positions, cos, sin }
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn schedule(&self) -> &ThetaSchedule {
        &self.schedule
    }

    /// Rotates each `head_dim` block of `row` for `position`.
    #[inline]
    pub(crate) fn rotate_row(&self, row: &mut [T], position: usize) {
        let pairs = self.schedule.pairs();
        let cos = &self.cos[position * pairs..(position + 1) * pairs];
        let sin = &self.sin[position * pairs..(position + 1) * pairs];
        for head in row.chunks_exact_mut(2 * pairs) {
            for ((p, &c), &s) in head.chunks_exact_mut(2).zip(cos).zip(sin) {
                let (x0, x1) = (p[0], p[1]);
                p[0] = x0 * c - x1 * s;
                p[1] = x0 * s + x1 * c;
            }
        }
    }

    /// Applies the transpose (inverse) rotation; used to pull gradients back.
    #[inline]
    pub(crate) fn rotate_row_inverse(&self, row: &mut [T], position: usize) {
        let pairs = self.schedule.pairs();
        let cos = &self.cos[position * pairs..(position + 1) * pairs];
        let sin = &self.sin[position * pairs..(position + 1) * pairs];
        for head in row.chunks_exact_mut(2 * pairs) {
            for ((p, &c), &s) in head.chunks_exact_mut(2).zip(cos).zip(sin) {
                let (g0, g1) = (p[0], p[1]);
                p[0] = g0 * c + g1 * s;
                p[1] = g1 * c - g0 * s;
            }
        }
    }
}

/// Hands out the angle table for a given sequence length.
///
/// Static schedules share one table sized `max_positions`; longer inputs are
/// rejected unless `auto_extend_positions` is set. Dynamic NTK rebuilds the
/// schedule per length (with `s = max(len / L, 1)`) and memoises the tables.
#[derive(Debug, Clone)]
pub struct PositionEncoder<T> {
    config: ModelConfig,
    table: RopeTable<T>,
    dynamic: BTreeMap<usize, RopeTable<T>>,
}

impl<T: Scalar> PositionEncoder<T> {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let schedule = compose_for_length(
            &config.pe,
            config.head_dim,
            config.rotary_base,
            config.pe.train_length,
        )?;
        Ok(Self {
            config: config.clone(),
            table: RopeTable::new(&schedule, config.max_positions),
            dynamic: BTreeMap::new(),
        })
    }

    /// Schedule used for sequences up to the training length.
    pub fn schedule(&self) -> &ThetaSchedule {
        self.table.schedule()
    }

    pub fn table_for(&mut self, seq_len: usize) -> Result<&RopeTable<T>> {
        if self.config.pe.method == ScalingMethod::DynamicNtk && seq_len > self.config.pe.train_length
        {
            if !self.dynamic.contains_key(&seq_len) {
                let schedule = compose_for_length(
                    &self.config.pe,
                    self.config.head_dim,
                    self.config.rotary_base,
                    seq_len,
                )?;
                self.dynamic.insert(seq_len, RopeTable::new(&schedule, seq_len));
            }
            return Ok(&self.dynamic[&seq_len]);
        }
        if seq_len > self.table.positions() {
            if !self.config.auto_extend_positions {
                return Err(invalid_arg!(
                    "sequence length {seq_len} exceeds the {}-position angle table",
                    self.table.positions()
                ));
            }
            let schedule = self.table.schedule().clone();
            self.table = RopeTable::new(&schedule, seq_len.next_power_of_two());
        }
        Ok(&self.table)
    }
}
