//! Feature-gap analysis between trained and unseen positions.
//!
//! Features are measured on the canonical inputs: with an identity
//! projection and `x` a basis vector of pair `j`, the rotary feature at
//! position `m` is `(cos m*theta_j, sin m*theta_j)`. For every scalar
//! dimension we report
//!
//! - the *joint* gap: `min over m in [0, L), n in [L, L')` of the distance,
//! - the *worst-OOD* gap: `max over n` of `min over m`,
//!
//! and per pair the same two statistics for the chordal distance
//! `sqrt(dcos^2 + dsin^2)`.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;

pub use num_bigint::BigUint;
use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::rope::ThetaSchedule;

/// Which statistic summarises a dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    Joint,
    WorstOod,
}

/// How the nearest in-range feature is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapAlgorithm {
    /// Enumerate when `L * (L' - L) * pairs <= ENUMERATION_LIMIT`, else sort.
    Auto,
    /// Every `(m, n)` pair.
    Enumerate,
    /// Sort in-range features once, then binary-search per OOD position.
    Sorted,
}

pub const ENUMERATION_LIMIT: u128 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub schedule_id: String,
    pub train_length: usize,
    pub test_length: usize,
    /// Statistic used for the two `*_max_gap` summaries.
    pub mode: GapMode,
    pub critical_index: usize,
    pub per_dim_joint_gap: Vec<f64>,
    pub per_dim_worst_ood_gap: Vec<f64>,
    pub per_pair_joint_chord: Vec<f64>,
    pub per_pair_worst_ood_chord: Vec<f64>,
    pub pre_critical_max_gap: f64,
    pub post_critical_max_gap: f64,
}

impl GapReport {
    pub fn per_dim(&self, mode: GapMode) -> &[f64] {
        match mode {
            GapMode::Joint => &self.per_dim_joint_gap,
            GapMode::WorstOod => &self.per_dim_worst_ood_gap,
        }
    }

    pub fn per_pair_chord(&self, mode: GapMode) -> &[f64] {
        match mode {
            GapMode::Joint => &self.per_pair_joint_chord,
            GapMode::WorstOod => &self.per_pair_worst_ood_chord,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct PairGap {
    cos: MinMax,
    sin: MinMax,
    chord: MinMax,
}

/// Joint (min over n) and worst (max over n) of per-n nearest distances.
#[derive(Debug, Clone, Copy, PartialEq)]
struct MinMax {
    joint: f64,
    worst: f64,
}

impl Default for MinMax {
    fn default() -> Self {
        Self { joint: f64::INFINITY, worst: 0.0 }
    }
}

impl MinMax {
    fn push(&mut self, nearest: f64) {
        self.joint = self.joint.min(nearest);
        self.worst = self.worst.max(nearest);
    }
}

#[derive(Debug, Clone, Copy)]
struct Feature {
    cos: f64,
    sin: f64,
}

fn feature(schedule: &ThetaSchedule, pair: usize, position: u64) -> Feature {
    let (sin, cos) = libm::sincos(schedule.angle(pair, position));
    Feature { cos, sin }
}

fn chord(a: Feature, b: Feature) -> f64 {
    let (dc, ds) = (a.cos - b.cos, a.sin - b.sin);
    libm::sqrt(dc * dc + ds * ds)
}

fn wrap_angle(angle: f64) -> f64 {
    let r = libm::fmod(angle, TAU);
    if r < 0.0 {
        r + TAU
    } else {
        r
    }
}

/// Sorted views of the in-range features of one pair.
struct InRange {
    cos: Vec<f64>,
    sin: Vec<f64>,
    /// (angle mod 2pi, feature), sorted by angle.
    circle: Vec<(f64, Feature)>,
}

impl InRange {
    fn new(schedule: &ThetaSchedule, pair: usize, positions: u64) -> Self {
        let mut cos = Vec::with_capacity(positions as usize);
        let mut sin = Vec::with_capacity(positions as usize);
        let mut circle = Vec::with_capacity(positions as usize);
        for m in 0..positions {
            let f = feature(schedule, pair, m);
            cos.push(f.cos);
            sin.push(f.sin);
            circle.push((wrap_angle(schedule.angle(pair, m)), f));
        }
        cos.sort_by(f64::total_cmp);
        sin.sort_by(f64::total_cmp);
        circle.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { cos, sin, circle }
    }

    fn nearest_scalar(sorted: &[f64], x: f64) -> f64 {
        let i = sorted.partition_point(|&v| v < x);
        let mut best = f64::INFINITY;
        if i < sorted.len() {
            best = best.min((sorted[i] - x).abs());
        }
        if i > 0 {
            best = best.min((x - sorted[i - 1]).abs());
        }
        best
    }

    /// Nearest chordal distance; the angle keys carry rounding from the
    /// modular reduction, so two neighbours on each side are checked.
    fn nearest_chord(&self, angle: f64, f: Feature) -> f64 {
        let n = self.circle.len();
        let key = wrap_angle(angle);
        let i = self.circle.partition_point(|e| e.0 < key);
        let mut best = f64::INFINITY;
        for off in 0..4 {
            let idx = (i + 2 * n + off - 2) % n;
            best = best.min(chord(self.circle[idx].1, f));
        }
        best
    }
}

fn pair_gap_sorted(schedule: &ThetaSchedule, pair: usize, train: u64, test: u64) -> PairGap {
    let table = InRange::new(schedule, pair, train);
    let mut gap = PairGap::default();
    for n in train..test {
        let f = feature(schedule, pair, n);
        gap.cos.push(InRange::nearest_scalar(&table.cos, f.cos));
        gap.sin.push(InRange::nearest_scalar(&table.sin, f.sin));
        gap.chord.push(table.nearest_chord(schedule.angle(pair, n), f));
    }
    gap
}

fn pair_gap_enumerate(schedule: &ThetaSchedule, pair: usize, train: u64, test: u64) -> PairGap {
    let seen: Vec<Feature> = (0..train).map(|m| feature(schedule, pair, m)).collect();
    let mut gap = PairGap::default();
    for n in train..test {
        let f = feature(schedule, pair, n);
        let (mut c, mut s, mut ch) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        for g in &seen {
            c = c.min((g.cos - f.cos).abs());
            s = s.min((g.sin - f.sin).abs());
            ch = ch.min(chord(*g, f));
        }
        gap.cos.push(c);
        gap.sin.push(s);
        gap.chord.push(ch);
    }
    gap
}

/// Feature gap of `schedule` between positions `[0, L)` and `[L, L')`.
pub fn feature_gap(
    schedule: &ThetaSchedule,
    train_length: usize,
    test_length: usize,
    mode: GapMode,
) -> Result<GapReport> {
    feature_gap_with(schedule, train_length, test_length, mode, GapAlgorithm::Auto)
}

pub fn feature_gap_with(
    schedule: &ThetaSchedule,
    train_length: usize,
    test_length: usize,
    mode: GapMode,
    algorithm: GapAlgorithm,
) -> Result<GapReport> {
    if train_length == 0 || test_length <= train_length {
        return Err(invalid_arg!(
            "need 1 <= L < L', got L={train_length} L'={test_length}"
        ));
    }
    let pairs = schedule.pairs();
    let work = train_length as u128 * (test_length - train_length) as u128 * pairs as u128;
    let enumerate = match algorithm {
        GapAlgorithm::Enumerate => true,
        GapAlgorithm::Sorted => false,
        GapAlgorithm::Auto => work <= ENUMERATION_LIMIT,
    };
    let split = schedule.critical_split(train_length)?;
    let (l, lp) = (train_length as u64, test_length as u64);

    let mut report = GapReport {
        schedule_id: schedule.label(),
        train_length,
        test_length,
        mode,
        critical_index: split.critical_index,
        per_dim_joint_gap: Vec::with_capacity(2 * pairs),
        per_dim_worst_ood_gap: Vec::with_capacity(2 * pairs),
        per_pair_joint_chord: Vec::with_capacity(pairs),
        per_pair_worst_ood_chord: Vec::with_capacity(pairs),
        pre_critical_max_gap: 0.0,
        post_critical_max_gap: 0.0,
    };
    for pair in 0..pairs {
        let gap = if enumerate {
            pair_gap_enumerate(schedule, pair, l, lp)
        } else {
            pair_gap_sorted(schedule, pair, l, lp)
        };
        report.per_dim_joint_gap.extend([gap.cos.joint, gap.sin.joint]);
        report.per_dim_worst_ood_gap.extend([gap.cos.worst, gap.sin.worst]);
        report.per_pair_joint_chord.push(gap.chord.joint);
        report.per_pair_worst_ood_chord.push(gap.chord.worst);
    }
    let summary = report.per_dim(mode);
    let max_over = |dims: core::ops::Range<usize>| dims.map(|i| summary[i]).fold(0.0, f64::max);
    let pre = max_over(0..split.pre_critical_dims());
    let post = max_over(split.pre_critical_dims()..2 * pairs);
    report.pre_critical_max_gap = pre;
    report.post_critical_max_gap = post;
    Ok(report)
}

/// Embedded vector distance between two schedules: the largest, over
/// canonical inputs, of the smallest distance between a feature of
/// `schedule_a` at `k < n_a` and one of `schedule_b` at `j < n_b`.
///
/// Both ranges start at position 0, where every rotation is the identity,
/// so the joint minimum is zero for any pair of schedules.
pub fn embedded_vector_distance(
    schedule_a: &ThetaSchedule,
    schedule_b: &ThetaSchedule,
    n_a: usize,
    n_b: usize,
) -> Result<f64> {
    if n_a == 0 || n_b == 0 {
        return Err(invalid_arg!("position counts must be >= 1"));
    }
    if schedule_a.head_dim() != schedule_b.head_dim() {
        return Err(invalid_arg!(
            "head dims differ: {} vs {}",
            schedule_a.head_dim(),
            schedule_b.head_dim()
        ));
    }
    let mut worst: f64 = 0.0;
    for pair in 0..schedule_a.pairs() {
        let table = InRange::new(schedule_a, pair, n_a as u64);
        let nearest = (0..n_b as u64)
            .map(|j| table.nearest_chord(schedule_b.angle(pair, j), feature(schedule_b, pair, j)))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(nearest);
    }
    Ok(worst)
}

/// Exact least common multiple of the integer wavelengths of pairs
/// `0..critical_index`: the period after which all of them realign.
pub fn resonance_lcm(schedule: &ThetaSchedule, critical_index: usize) -> Result<BigUint> {
    let periods = schedule.integer_wavelengths().ok_or_else(|| {
        Error::InvalidState(String::from("resonance has not been applied to this schedule"))
    })?;
    if critical_index > periods.len() {
        return Err(invalid_arg!(
            "critical index {critical_index} exceeds pair count {}",
            periods.len()
        ));
    }
    Ok(lcm_of(&periods[..critical_index]))
}

pub fn lcm_of(values: &[u64]) -> BigUint {
    values
        .iter()
        .fold(BigUint::from(1u32), |acc, &v| acc.lcm(&BigUint::from(v)))
}
