//! Schedule-to-schedule scaling transforms.
//!
//! Every transform takes a [`ThetaSchedule`] (or its parameters) and returns
//! a new one with the step appended to its trace. [`compose`] builds the
//! schedule a [`ScalingSpec`] describes; Resonance rounding is applied last
//! unless the spec asks for the reversed ablation order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::rope::ThetaSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMethod {
    None,
    NtkAware,
    DynamicNtk,
    Yarn,
}

/// One applied transform, recorded in a schedule's trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalingStep {
    NtkAware { scale: f64 },
    DynamicNtk { scale: f64, current_length: usize, train_length: usize },
    Yarn { scale: f64, train_length: usize, alpha: f64, beta: f64 },
    Resonance,
}

impl ScalingStep {
    pub fn label(&self) -> String {
        match self {
            ScalingStep::NtkAware { scale } => format!("ntk(s={scale})"),
            ScalingStep::DynamicNtk { scale, .. } => format!("dynamic_ntk(s={scale})"),
            ScalingStep::Yarn { scale, .. } => format!("yarn(s={scale})"),
            ScalingStep::Resonance => String::from("resonance"),
        }
    }
}

fn default_scale() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    32.0
}

/// Which scaling to apply, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub method: ScalingMethod,
    #[serde(default = "default_scale")]
    pub scale_factor: f64,
    pub train_length: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub resonance: bool,
    /// Constant multiplier on attention logits; `None` means 1.
    #[serde(default)]
    pub attention_scale: Option<f64>,
    /// Ablation switch: round wavelengths before YaRN/NTK instead of after.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub resonance_first: bool,
}

impl ScalingSpec {
    pub fn new(method: ScalingMethod, scale_factor: f64, train_length: usize) -> Self {
        Self {
            method,
            scale_factor,
            train_length,
            alpha: default_alpha(),
            beta: default_beta(),
            resonance: false,
            attention_scale: None,
            resonance_first: false,
        }
    }

    /// Plain RoPE.
    pub fn rope(train_length: usize) -> Self {
        Self::new(ScalingMethod::None, 1.0, train_length)
    }

    pub fn yarn(scale_factor: f64, train_length: usize) -> Self {
        Self::new(ScalingMethod::Yarn, scale_factor, train_length)
    }

    pub fn with_resonance(mut self, on: bool) -> Self {
        self.resonance = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_length == 0 {
            return Err(invalid_arg!("train_length must be >= 1"));
        }
        if self.method != ScalingMethod::DynamicNtk
            && (!(self.scale_factor >= 1.0) || !self.scale_factor.is_finite())
        {
            return Err(invalid_arg!("scale_factor must be >= 1, got {}", self.scale_factor));
        }
        if self.method == ScalingMethod::Yarn && !(self.beta > self.alpha && self.alpha > 0.0) {
            return Err(invalid_arg!(
                "yarn requires beta > alpha > 0, got alpha={} beta={}",
                self.alpha,
                self.beta
            ));
        }
        if let Some(a) = self.attention_scale {
            if !(a > 0.0) || !a.is_finite() {
                return Err(invalid_arg!("attention_scale must be positive, got {a}"));
            }
        }
        Ok(())
    }

    /// Logit multiplier applied after the usual `1/sqrt(d)`.
    pub fn logit_multiplier(&self) -> f64 {
        self.attention_scale.unwrap_or(1.0)
    }

    /// Short name used in tables, e.g. `Res. YaRN`.
    pub fn display_name(&self) -> String {
        let base = match self.method {
            ScalingMethod::None => "RoPE",
            ScalingMethod::NtkAware => "NTK-Aware",
            ScalingMethod::DynamicNtk => "Dynamic NTK",
            ScalingMethod::Yarn => "YaRN",
        };
        if self.resonance {
            format!("Res. {base}")
        } else {
            String::from(base)
        }
    }
}

/// Rounds every wavelength to the nearest integer (half away from zero,
/// clamped to at least 1) and recomputes the frequencies from it.
pub fn apply_resonance(schedule: &ThetaSchedule) -> ThetaSchedule {
    let rounded: Vec<u64> = match schedule.integer_wavelengths() {
        Some(w) => w.to_vec(),
        None => schedule
            .wavelengths()
            .iter()
            .map(|&w| (libm::round(w) as u64).max(1))
            .collect(),
    };
    let mut trace = schedule.scaling_trace().to_vec();
    if trace.last() != Some(&ScalingStep::Resonance) {
        trace.push(ScalingStep::Resonance);
    }
    ThetaSchedule::from_integer_wavelengths(
        schedule.head_dim(),
        schedule.rotary_base(),
        rounded,
        trace,
    )
}

/// NTK-aware scaling: the rotary base becomes `scale * base`.
pub fn apply_ntk_aware(head_dim: usize, rotary_base: f64, scale: f64) -> Result<ThetaSchedule> {
    if !(scale >= 1.0) || !scale.is_finite() {
        return Err(invalid_arg!("NTK scale must be >= 1, got {scale}"));
    }
    let plain = ThetaSchedule::new(head_dim, rotary_base)?;
    scale_base(&plain, scale, ScalingStep::NtkAware { scale })
}

/// Scale factor used by dynamic NTK for a sequence of `current_length`.
pub fn dynamic_scale(current_length: usize, train_length: usize) -> f64 {
    let ratio = current_length as f64 / train_length.max(1) as f64;
    ratio.max(1.0)
}

/// YaRN's NTK-by-parts interpolation weight for one wavelength.
pub fn yarn_ramp(wavelength: f64, train_length: usize, alpha: f64, beta: f64) -> f64 {
    let l = train_length as f64;
    if wavelength < l / beta {
        1.0
    } else if wavelength > l / alpha {
        0.0
    } else {
        (l / wavelength - alpha) / (beta - alpha)
    }
}

/// NTK-by-parts: short wavelengths are kept, long ones stretched by `scale`,
/// with a linear ramp in `L / lambda` between `alpha` and `beta`.
pub fn apply_yarn(
    schedule: &ThetaSchedule,
    scale: f64,
    train_length: usize,
    alpha: f64,
    beta: f64,
) -> Result<ThetaSchedule> {
    if !(beta > alpha && alpha > 0.0) {
        return Err(invalid_arg!("yarn requires beta > alpha > 0, got alpha={alpha} beta={beta}"));
    }
    if !(scale >= 1.0) || !scale.is_finite() {
        return Err(invalid_arg!("yarn scale must be >= 1, got {scale}"));
    }
    if train_length == 0 {
        return Err(invalid_arg!("train_length must be >= 1"));
    }
    let thetas = schedule
        .thetas()
        .iter()
        .zip(schedule.wavelengths())
        .map(|(&theta, &lambda)| {
            let gamma = yarn_ramp(lambda, train_length, alpha, beta);
            if gamma == 1.0 {
                // untouched pairs keep their exact frequency
                theta
            } else if gamma == 0.0 {
                TAU / (scale * lambda)
            } else {
                TAU / ((1.0 - gamma) * scale * lambda + gamma * lambda)
            }
        })
        .collect();
    let mut trace = schedule.scaling_trace().to_vec();
    trace.push(ScalingStep::Yarn { scale, train_length, alpha, beta });
    Ok(ThetaSchedule::from_thetas(
        schedule.head_dim(),
        schedule.rotary_base(),
        thetas,
        trace,
    ))
}

/// Builds the schedule described by `spec` on top of `(head_dim, base)`.
///
/// Dynamic NTK uses the training length as the current length here; use
/// [`compose_for_length`] for a concrete sequence length.
pub fn compose(spec: &ScalingSpec, head_dim: usize, rotary_base: f64) -> Result<ThetaSchedule> {
    compose_for_length(spec, head_dim, rotary_base, spec.train_length)
}

pub fn compose_for_length(
    spec: &ScalingSpec,
    head_dim: usize,
    rotary_base: f64,
    current_length: usize,
) -> Result<ThetaSchedule> {
    spec.validate()?;
    let mut schedule = ThetaSchedule::new(head_dim, rotary_base)?;
    if spec.resonance && spec.resonance_first {
        schedule = apply_resonance(&schedule);
    }
    let scaled = match spec.method {
        ScalingMethod::None => schedule,
        ScalingMethod::NtkAware => {
            let scale = spec.scale_factor;
            scale_base(&schedule, scale, ScalingStep::NtkAware { scale })?
        }
        ScalingMethod::DynamicNtk => {
            let scale = dynamic_scale(current_length, spec.train_length);
            let step = ScalingStep::DynamicNtk {
                scale,
                current_length,
                train_length: spec.train_length,
            };
            scale_base(&schedule, scale, step)?
        }
        ScalingMethod::Yarn => apply_yarn(
            &schedule,
            spec.scale_factor,
            spec.train_length,
            spec.alpha,
            spec.beta,
        )?,
    };
    if spec.resonance && !spec.resonance_first {
        Ok(apply_resonance(&scaled))
    } else {
        Ok(scaled)
    }
}

/// Replaces base `b` by `scale * b`, i.e. `theta_j` is multiplied by
/// `scale^(-2j/d)`. A unit scale leaves the schedule untouched apart from
/// the trace entry.
fn scale_base(schedule: &ThetaSchedule, scale: f64, step: ScalingStep) -> Result<ThetaSchedule> {
    let mut trace = schedule.scaling_trace().to_vec();
    trace.push(step);
    let (d, new_base) = (schedule.head_dim(), scale * schedule.rotary_base());
    if scale == 1.0 {
        return Ok(match schedule.integer_wavelengths() {
            Some(w) => ThetaSchedule::from_integer_wavelengths(d, new_base, w.to_vec(), trace),
            None => ThetaSchedule::from_thetas(d, new_base, schedule.thetas().to_vec(), trace),
        });
    }
    let thetas = if schedule.integer_wavelengths().is_none() && schedule.scaling_trace().is_empty()
    {
        ThetaSchedule::new(d, new_base)?.thetas().to_vec()
    } else {
        schedule
            .thetas()
            .iter()
            .enumerate()
            .map(|(j, &t)| t * libm::pow(scale, -(2.0 * j as f64) / d as f64))
            .collect()
    };
    Ok(ThetaSchedule::from_thetas(d, new_base, thetas, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base(d: usize) -> ThetaSchedule {
        ThetaSchedule::new(d, 10000.0).unwrap()
    }

    #[test]
    fn resonance_rounds_first_wavelength_to_six() {
        let r = apply_resonance(&base(128));
        let w = r.integer_wavelengths().unwrap();
        assert_eq!(w[0], 6);
        assert!((r.thetas()[0] - core::f64::consts::PI / 3.0).abs() < 1e-12);
        assert_eq!(w[63], 54410);
        assert_eq!(r.scaling_trace(), &[ScalingStep::Resonance]);
        r.validate().unwrap();
    }

    #[test]
    fn resonance_is_idempotent() {
        let once = apply_resonance(&base(64));
        assert_eq!(apply_resonance(&once), once);
    }

    #[test]
    fn ntk_aware_scales_the_base() {
        let s = apply_ntk_aware(128, 10000.0, 8.0).unwrap();
        assert_eq!(s.rotary_base(), 80000.0);
        assert!((s.wavelengths()[0] - TAU).abs() < 1e-12);
        let expected = TAU * libm::pow(80000.0, 126.0 / 128.0);
        assert!((s.wavelengths()[63] - expected).abs() < 1e-9 * expected);

        let identity = apply_ntk_aware(128, 10000.0, 1.0).unwrap();
        assert_eq!(identity.thetas(), base(128).thetas());
        assert!(apply_ntk_aware(128, 10000.0, 0.5).is_err());
    }

    #[test]
    fn dynamic_scale_examples() {
        assert_eq!(dynamic_scale(8192, 4096), 2.0);
        assert_eq!(dynamic_scale(4096, 4096), 1.0);
        assert_eq!(dynamic_scale(6144, 4096), 1.5);
        assert_eq!(dynamic_scale(100, 4096), 1.0);
    }

    /// Single-pair schedule (d = 2) whose only wavelength is `lambda`.
    fn single(lambda: f64) -> ThetaSchedule {
        ThetaSchedule::from_thetas(2, 10000.0, alloc::vec![TAU / lambda], alloc::vec![])
    }

    #[test]
    fn yarn_branches() {
        let kept = apply_yarn(&single(64.0), 4.0, 4096, 1.0, 32.0).unwrap();
        assert!((kept.wavelengths()[0] - 64.0).abs() < 1e-12);

        let stretched = apply_yarn(&single(8192.0), 4.0, 4096, 1.0, 32.0).unwrap();
        assert!((stretched.wavelengths()[0] - 32768.0).abs() < 1e-9);

        let ramp = apply_yarn(&single(1024.0), 4.0, 4096, 1.0, 32.0).unwrap();
        // gamma = (4096/1024 - 1) / 31 = 3/31
        assert!((yarn_ramp(1024.0, 4096, 1.0, 32.0) - 3.0 / 31.0).abs() < 1e-15);
        assert!((ramp.wavelengths()[0] - 3798.7).abs() < 0.01);
    }

    #[test]
    fn yarn_rejects_bad_hyperparameters() {
        assert!(apply_yarn(&base(8), 4.0, 64, 32.0, 1.0).is_err());
        assert!(apply_yarn(&base(8), 4.0, 64, 1.0, 1.0).is_err());
        assert!(apply_yarn(&base(8), 4.0, 64, 0.0, 1.0).is_err());
        assert!(apply_yarn(&base(8), 0.5, 64, 1.0, 32.0).is_err());
    }

    #[test]
    fn yarn_clears_integer_wavelengths() {
        let r = apply_resonance(&base(64));
        let y = apply_yarn(&r, 4.0, 64, 1.0, 32.0).unwrap();
        assert!(y.integer_wavelengths().is_none());
    }

    #[test]
    fn compose_examples() {
        let spec = ScalingSpec::rope(64).with_resonance(true);
        assert_eq!(compose(&spec, 64, 10000.0).unwrap(), apply_resonance(&base(64)));

        let yarn = ScalingSpec::yarn(4.0, 64);
        let plain_yarn = apply_yarn(&base(64), 4.0, 64, 1.0, 32.0).unwrap();
        assert_eq!(compose(&yarn, 64, 10000.0).unwrap(), plain_yarn);

        let res_yarn = compose(&yarn.clone().with_resonance(true), 64, 10000.0).unwrap();
        let expected: Vec<u64> =
            plain_yarn.wavelengths().iter().map(|w| libm::round(*w) as u64).collect();
        assert_eq!(res_yarn.integer_wavelengths().unwrap(), expected.as_slice());
        assert_eq!(
            res_yarn.scaling_trace(),
            &[
                ScalingStep::Yarn { scale: 4.0, train_length: 64, alpha: 1.0, beta: 32.0 },
                ScalingStep::Resonance
            ]
        );
    }

    #[test]
    fn compose_ntk_and_dynamic() {
        let ntk = ScalingSpec::new(ScalingMethod::NtkAware, 8.0, 4096);
        assert_eq!(compose(&ntk, 128, 10000.0).unwrap().rotary_base(), 80000.0);

        let dynamic = ScalingSpec::new(ScalingMethod::DynamicNtk, 1.0, 4096);
        let at_train = compose(&dynamic, 128, 10000.0).unwrap();
        assert_eq!(at_train.thetas(), base(128).thetas());
        let long = compose_for_length(&dynamic, 128, 10000.0, 8192).unwrap();
        let reference = apply_ntk_aware(128, 10000.0, 2.0).unwrap();
        for (a, b) in long.thetas().iter().zip(reference.thetas()) {
            assert!((a - b).abs() <= 1e-15 * b);
        }
    }

    #[test]
    fn resonance_first_ablation_order() {
        let mut spec = ScalingSpec::yarn(4.0, 64).with_resonance(true);
        spec.resonance_first = true;
        let s = compose(&spec, 64, 10000.0).unwrap();
        assert_eq!(s.scaling_trace().first(), Some(&ScalingStep::Resonance));
        assert!(s.integer_wavelengths().is_none());
    }

    #[test]
    fn spec_validation() {
        assert!(ScalingSpec::yarn(4.0, 64).validate().is_ok());
        let mut bad = ScalingSpec::yarn(4.0, 64);
        bad.alpha = 40.0;
        assert!(bad.validate().is_err());
        assert!(ScalingSpec::yarn(0.5, 64).validate().is_err());
        assert!(ScalingSpec::yarn(4.0, 0).validate().is_err());
        let mut scaled = ScalingSpec::rope(64);
        scaled.attention_scale = Some(-1.0);
        assert!(scaled.validate().is_err());
    }

    proptest! {
        #[test]
        fn yarn_never_shrinks_and_respects_branches(
            d in (1usize..65).prop_map(|h| 2 * h),
            log_base in 1.0f64..6.0,
            scale in 1.0f64..16.0,
            train in 1usize..100_000,
        ) {
            let s = ThetaSchedule::new(d, libm::pow(10.0, log_base)).unwrap();
            let y = apply_yarn(&s, scale, train, 1.0, 32.0).unwrap();
            let l = train as f64;
            for j in 0..s.pairs() {
                let (before, after) = (s.wavelengths()[j], y.wavelengths()[j]);
                prop_assert!(after >= before * (1.0 - 1e-15));
                if before < l / 32.0 {
                    prop_assert_eq!(y.thetas()[j].to_bits(), s.thetas()[j].to_bits());
                }
                if before > l {
                    prop_assert!((after - scale * before).abs() <= 1e-12 * after);
                }
            }
            prop_assert!(y.validate().is_ok());
        }

        #[test]
        fn resonance_after_yarn_is_close_and_integral(
            scale in 1.0f64..8.0,
            train in 1usize..10_000,
        ) {
            let spec = ScalingSpec::yarn(scale, train).with_resonance(true);
            let r = compose(&spec, 64, 10000.0).unwrap();
            let y = apply_yarn(&base(64), scale, train, 1.0, 32.0).unwrap();
            let w = r.integer_wavelengths().unwrap();
            for j in 0..32 {
                prop_assert!(w[j] >= 1);
                prop_assert!((w[j] as f64 - y.wavelengths()[j]).abs() <= 0.5);
            }
            prop_assert!(r.validate().is_ok());
        }

        #[test]
        fn resonance_is_a_small_perturbation(log_base in 0.5f64..7.0, d in (1usize..129).prop_map(|h| 2 * h)) {
            let s = ThetaSchedule::new(d, libm::pow(10.0, log_base)).unwrap();
            let r = apply_resonance(&s);
            let w = r.integer_wavelengths().unwrap();
            for j in 0..s.pairs() {
                let (old, new) = (s.thetas()[j], r.thetas()[j]);
                let lambda = s.wavelengths()[j];
                // measured against the rounded frequency the bound is 0.5 / lambda
                prop_assert!((new - old).abs() / new <= 0.5 / lambda + 1e-15);
                prop_assert!((new - old).abs() / old <= 0.5 / w[j] as f64 + 1e-15);
                prop_assert!((new - old).abs() / new <= 0.5 / TAU + 1e-15);
            }
        }
    }
}
