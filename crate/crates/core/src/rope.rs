//! Rotary frequency schedules and the rotation itself.
//!
//! Feature pair `j` of a `d`-dimensional head rotates coordinates
//! `(2j, 2j + 1)` by `m * theta_j` at position `m`, with
//! `theta_j = b^(-2j/d)`. The wavelength `2 pi / theta_j` is the number of
//! positions after which the pair returns to (nearly) the same angle.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;
use core::ops::Range;

use crate::error::{invalid_arg, Result};
use crate::scaling::ScalingStep;

/// Per-pair angular frequencies of a rotary embedding plus how they were
/// obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSchedule {
    head_dim: usize,
    rotary_base: f64,
    thetas: Vec<f64>,
    wavelengths: Vec<f64>,
    integer_wavelengths: Option<Vec<u64>>,
    scaling_trace: Vec<ScalingStep>,
}

impl ThetaSchedule {
    /// Standard RoPE schedule `theta_j = base^(-2j/head_dim)`.
    pub fn new(head_dim: usize, rotary_base: f64) -> Result<Self> {
        if head_dim < 2 || !head_dim.is_multiple_of(2) {
            return Err(invalid_arg!("head_dim must be a positive even integer, got {head_dim}"));
        }
        if !(rotary_base > 1.0) || !rotary_base.is_finite() {
            return Err(invalid_arg!("rotary base must be a finite value > 1, got {rotary_base}"));
        }
        let d = head_dim as f64;
        let thetas: Vec<f64> = (0..head_dim / 2)
            .map(|j| libm::pow(rotary_base, -(2.0 * j as f64) / d))
            .collect();
        let wavelengths = thetas.iter().map(|t| TAU / t).collect();
        Ok(Self {
            head_dim,
            rotary_base,
            thetas,
            wavelengths,
            integer_wavelengths: None,
            scaling_trace: Vec::new(),
        })
    }

    /// Builds a schedule from explicit frequencies. Used by the scaling
    /// transforms; callers outside the crate go through
    /// [`ThetaSchedule::from_parts`], which validates.
    pub(crate) fn from_thetas(
        head_dim: usize,
        rotary_base: f64,
        thetas: Vec<f64>,
        scaling_trace: Vec<ScalingStep>,
    ) -> Self {
        let wavelengths = thetas.iter().map(|t| TAU / t).collect();
        Self {
            head_dim,
            rotary_base,
            thetas,
            wavelengths,
            integer_wavelengths: None,
            scaling_trace,
        }
    }

    pub(crate) fn from_integer_wavelengths(
        head_dim: usize,
        rotary_base: f64,
        integer_wavelengths: Vec<u64>,
        scaling_trace: Vec<ScalingStep>,
    ) -> Self {
        let thetas = integer_wavelengths.iter().map(|&w| TAU / w as f64).collect();
        let wavelengths = integer_wavelengths.iter().map(|&w| w as f64).collect();
        Self {
            head_dim,
            rotary_base,
            thetas,
            wavelengths,
            integer_wavelengths: Some(integer_wavelengths),
            scaling_trace,
        }
    }

    /// Reassembles a schedule from serialized parts and checks every
    /// invariant. Wavelengths are recomputed from the frequencies.
    pub fn from_parts(
        head_dim: usize,
        rotary_base: f64,
        thetas: Vec<f64>,
        integer_wavelengths: Option<Vec<u64>>,
        scaling_trace: Vec<ScalingStep>,
    ) -> Result<Self> {
        let schedule = match integer_wavelengths {
            Some(w) => {
                let s = Self::from_integer_wavelengths(head_dim, rotary_base, w, scaling_trace);
                for (a, b) in s.thetas.iter().zip(&thetas) {
                    if (a - b).abs() > 1e-12 * a.abs() {
                        return Err(invalid_arg!(
                            "theta {b} disagrees with its integer wavelength (expected {a})"
                        ));
                    }
                }
                s
            }
            None => Self::from_thetas(head_dim, rotary_base, thetas, scaling_trace),
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Checks the structural invariants of the schedule.
    pub fn validate(&self) -> Result<()> {
        if self.head_dim < 2 || !self.head_dim.is_multiple_of(2) {
            return Err(invalid_arg!("head_dim must be a positive even integer"));
        }
        if self.thetas.len() != self.head_dim / 2 || self.wavelengths.len() != self.thetas.len() {
            return Err(invalid_arg!(
                "expected {} frequencies, found {}",
                self.head_dim / 2,
                self.thetas.len()
            ));
        }
        if self.thetas.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(invalid_arg!("frequencies must be finite and positive"));
        }
        for (t, w) in self.thetas.iter().zip(&self.wavelengths) {
            if ((TAU / t) - w).abs() > 1e-12 * w {
                return Err(invalid_arg!("wavelength {w} does not match 2pi/theta"));
            }
        }
        match &self.integer_wavelengths {
            // Rounding may merge neighbouring wavelengths, so integer
            // schedules are only required to be non-decreasing.
            Some(w) => {
                if w.len() != self.thetas.len() || w.iter().any(|&x| x < 1) {
                    return Err(invalid_arg!("integer wavelengths must be >= 1, one per pair"));
                }
                if w.windows(2).any(|p| p[1] < p[0]) {
                    return Err(invalid_arg!("integer wavelengths must be non-decreasing"));
                }
            }
            None => {
                if self.wavelengths.windows(2).any(|p| !(p[1] > p[0])) {
                    return Err(invalid_arg!("wavelengths must be strictly increasing"));
                }
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn rotary_base(&self) -> f64 {
        self.rotary_base
    }

    pub fn pairs(&self) -> usize {
        self.thetas.len()
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn integer_wavelengths(&self) -> Option<&[u64]> {
        self.integer_wavelengths.as_deref()
    }

    pub fn scaling_trace(&self) -> &[ScalingStep] {
        &self.scaling_trace
    }

    /// Short human-readable identifier, e.g. `rope(d=64,b=10000)+yarn(s=4)`.
    pub fn label(&self) -> String {
        let mut label = format!("rope(d={},b={})", self.head_dim, self.rotary_base);
        for step in &self.scaling_trace {
            label.push('+');
            label.push_str(&step.label());
        }
        label
    }

    /// Rotation angle of pair `pair` at `position`.
    ///
    /// With integer wavelengths the position is reduced modulo the period
    /// first, so positions one period apart produce bit-identical angles.
    #[inline]
    pub fn angle(&self, pair: usize, position: u64) -> f64 {
        match &self.integer_wavelengths {
            Some(w) => {
                let period = w[pair];
                TAU * (position % period) as f64 / period as f64
            }
            None => position as f64 * self.thetas[pair],
        }
    }

    /// Critical split for training length `train_length`: the first pair
    /// whose wavelength reaches the training length.
    pub fn critical_split(&self, train_length: usize) -> Result<CriticalSplit> {
        if train_length == 0 {
            return Err(invalid_arg!("train_length must be >= 1"));
        }
        let limit = train_length as f64;
        // Wavelengths are sorted, so the minimal index is a partition point.
        let critical_index = self.wavelengths.partition_point(|&w| w < limit);
        Ok(CriticalSplit {
            train_length,
            critical_index,
            pairs: self.pairs(),
        })
    }

    /// Applies the rotary encoding for `position` to a copy of `vector`.
    pub fn rotate(&self, vector: &[f64], position: u64) -> Result<Vec<f64>> {
        let mut out = vector.to_vec();
        self.rotate_in_place(&mut out, position)?;
        Ok(out)
    }

    pub fn rotate_in_place(&self, vector: &mut [f64], position: u64) -> Result<()> {
        if vector.len() != self.head_dim {
            return Err(invalid_arg!(
                "vector length {} does not match head_dim {}",
                vector.len(),
                self.head_dim
            ));
        }
        for (pair, chunk) in vector.chunks_exact_mut(2).enumerate() {
            let (sin, cos) = libm::sincos(self.angle(pair, position));
            let (x0, x1) = (chunk[0], chunk[1]);
            chunk[0] = x0 * cos - x1 * sin;
            chunk[1] = x0 * sin + x1 * cos;
        }
        Ok(())
    }
}

/// Split of the feature pairs into pre-critical (wavelength below the
/// training length) and post-critical pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CriticalSplit {
    pub train_length: usize,
    /// Index of the first post-critical pair (`c`).
    pub critical_index: usize,
    pub pairs: usize,
}

impl CriticalSplit {
    pub fn pre_critical_pairs(&self) -> Range<usize> {
        0..self.critical_index
    }

    pub fn post_critical_pairs(&self) -> Range<usize> {
        self.critical_index..self.pairs
    }

    /// Scalar dimensions covered by the pre-critical pairs (`2c`).
    pub fn pre_critical_dims(&self) -> usize {
        2 * self.critical_index
    }

    pub fn is_pre_critical(&self, pair: usize) -> bool {
        pair < self.critical_index
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn llama_wavelength_range() {
        let s = ThetaSchedule::new(128, 10000.0).unwrap();
        assert!(close(s.wavelengths()[0], TAU, 1e-12));
        assert!(close(s.wavelengths()[63], 54410.14, 0.01), "{}", s.wavelengths()[63]);
    }

    #[test]
    fn two_dim_schedule_is_unit_frequency() {
        let s = ThetaSchedule::new(2, 10000.0).unwrap();
        assert_eq!(s.thetas(), &[1.0]);
    }

    #[test]
    fn d64_wavelengths_around_critical_pair() {
        let s = ThetaSchedule::new(64, 10000.0).unwrap();
        // 2 pi * 10000^(2j/64) evaluated directly
        let direct = |j: f64| TAU * libm::pow(10000.0, 2.0 * j / 64.0);
        assert!(close(s.wavelengths()[8], direct(8.0), 1e-9));
        assert!(close(s.wavelengths()[9], direct(9.0), 1e-9));
        assert!(close(s.wavelengths()[8], 62.83, 0.005));
        assert!(close(s.wavelengths()[9], 83.79, 0.005));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(ThetaSchedule::new(3, 10000.0).is_err());
        assert!(ThetaSchedule::new(0, 10000.0).is_err());
        assert!(ThetaSchedule::new(8, 1.0).is_err());
        assert!(ThetaSchedule::new(8, 0.5).is_err());
        assert!(ThetaSchedule::new(8, f64::NAN).is_err());
    }

    #[test]
    fn critical_split_examples() {
        let llama = ThetaSchedule::new(128, 10000.0).unwrap();
        let split = llama.critical_split(4096).unwrap();
        assert_eq!(split.critical_index, 46);
        assert!(split.critical_index > 64 / 2);

        let small = ThetaSchedule::new(64, 10000.0).unwrap();
        let split = small.critical_split(64).unwrap();
        assert_eq!(split.critical_index, 9);
        assert_eq!(split.pre_critical_dims(), 18);
        assert_eq!(split.post_critical_pairs(), 9..32);

        let tiny = ThetaSchedule::new(2, 10000.0).unwrap();
        assert_eq!(tiny.critical_split(1).unwrap().critical_index, 0);
        // all wavelengths shorter than L: no post-critical pairs
        assert_eq!(tiny.critical_split(7).unwrap().critical_index, 1);
        assert!(tiny.critical_split(0).is_err());
    }

    #[test]
    fn rotate_examples() {
        let s = ThetaSchedule::new(2, 10000.0).unwrap();
        let r = s.rotate(&[1.0, 0.0], 1).unwrap();
        assert!(close(r[0], 0.54030, 1e-5) && close(r[1], 0.84147, 1e-5));

        let s = ThetaSchedule::new(16, 10000.0).unwrap();
        let v: Vec<f64> = (0..16).map(|i| i as f64 - 3.5).collect();
        assert_eq!(s.rotate(&v, 0).unwrap(), v);
        assert!(s.rotate(&v[..15], 3).is_err());
    }

    #[test]
    fn partition_covers_all_pairs() {
        let s = ThetaSchedule::new(64, 10000.0).unwrap();
        for l in [1, 7, 64, 500, 100_000] {
            let split = s.critical_split(l).unwrap();
            let mut all: Vec<usize> = split.pre_critical_pairs().collect();
            all.extend(split.post_critical_pairs());
            assert_eq!(all, (0..32).collect::<Vec<_>>());
            let c = split.critical_index;
            if c < 32 {
                assert!(s.wavelengths()[c] >= l as f64);
            }
            if c > 0 {
                assert!(s.wavelengths()[c - 1] < l as f64);
            }
        }
    }

    #[test]
    fn from_parts_round_trip_and_rejects_garbage() {
        let s = ThetaSchedule::new(8, 500.0).unwrap();
        let back =
            ThetaSchedule::from_parts(8, 500.0, s.thetas().to_vec(), None, vec![]).unwrap();
        assert_eq!(back, s);
        let mut bad = s.thetas().to_vec();
        bad.swap(0, 1);
        assert!(ThetaSchedule::from_parts(8, 500.0, bad, None, vec![]).is_err());
        assert!(ThetaSchedule::from_parts(8, 500.0, vec![1.0], None, vec![]).is_err());
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn unit_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0f64..1.0, d)
    }

    proptest! {
        #[test]
        fn rotation_preserves_norm(v in unit_vec(32), m in 0u64..1_000_000) {
            let s = ThetaSchedule::new(32, 10000.0).unwrap();
            let r = s.rotate(&v, m).unwrap();
            let (n0, n1) = (dot(&v, &v).sqrt(), dot(&r, &r).sqrt());
            prop_assert!((n0 - n1).abs() <= 1e-9 * n0.max(1e-300));
        }

        #[test]
        fn critical_split_is_monotone(a in 1usize..200_000, b in 1usize..200_000) {
            let s = ThetaSchedule::new(128, 10000.0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(
                s.critical_split(lo).unwrap().critical_index
                    <= s.critical_split(hi).unwrap().critical_index
            );
        }
    }
}
