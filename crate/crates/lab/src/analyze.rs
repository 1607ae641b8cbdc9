//! Wavelength, critical-split and feature-gap analysis of one schedule.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use resonance_core::gap::{feature_gap, resonance_lcm, BigUint, GapMode, GapReport};
use resonance_core::{CriticalSplit, ScalingMethod, ScalingSpec, ThetaSchedule};

use crate::cache::ScheduleCache;

#[derive(Debug, Clone)]
pub struct AnalyzeRequest {
    pub head_dim: usize,
    pub rotary_base: f64,
    pub train_length: usize,
    pub test_length: usize,
    pub spec: ScalingSpec,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub request: AnalyzeRequest,
    pub schedule: ThetaSchedule,
    pub split: CriticalSplit,
    pub joint: GapReport,
    pub worst_ood: GapReport,
    /// Common period of the pre-critical pairs, when wavelengths are integral.
    pub lcm: Option<BigUint>,
}

/// Dynamic NTK is analysed at the test length, everything else as composed.
pub fn analyze(request: &AnalyzeRequest) -> Result<Analysis> {
    if request.test_length <= request.train_length {
        bail!("test length {} must exceed train length {}", request.test_length, request.train_length);
    }
    let cache = ScheduleCache::new(request.spec.clone(), request.head_dim, request.rotary_base)?;
    let length = match request.spec.method {
        ScalingMethod::DynamicNtk => request.test_length,
        _ => request.spec.train_length,
    };
    let schedule = (*cache.get(length)?).clone();
    let split = schedule.critical_split(request.train_length)?;
    let joint = feature_gap(&schedule, request.train_length, request.test_length, GapMode::Joint)?;
    let worst_ood = feature_gap(&schedule, request.train_length, request.test_length, GapMode::WorstOod)?;
    let lcm = match schedule.integer_wavelengths() {
        Some(_) => Some(resonance_lcm(&schedule, split.critical_index)?),
        None => None,
    };
    Ok(Analysis { request: request.clone(), schedule, split, joint, worst_ood, lcm })
}

/// Magnitude of a big integer as `m.mmm x 10^e`.
pub fn scientific(value: &BigUint) -> String {
    let digits = value.to_string();
    let (head, tail) = digits.split_at(1);
    let frac = &tail[..tail.len().min(3)];
    if frac.is_empty() {
        head.to_string()
    } else {
        format!("{head}.{frac} x 10^{}", tail.len())
    }
}

/// Summary lines followed by one fixed-width row per scalar dimension.
pub fn render(a: &Analysis) -> String {
    let s = &a.split;
    let mut out = String::new();
    writeln!(out, "schedule: {}", a.schedule.label()).unwrap();
    writeln!(out, "train length L = {}, test length L' = {}", a.request.train_length, a.request.test_length).unwrap();
    writeln!(
        out,
        "critical pair index c = {} ({} of {} pairs pre-critical, {} of {} scalar dimensions)",
        s.critical_index,
        s.pre_critical_pairs().len(),
        s.pairs,
        s.pre_critical_dims(),
        2 * s.pairs
    )
    .unwrap();
    writeln!(
        out,
        "max joint gap: pre-critical {:.6e}, post-critical {:.6e}",
        a.joint.pre_critical_max_gap, a.joint.post_critical_max_gap
    )
    .unwrap();
    writeln!(
        out,
        "max worst-OOD gap: pre-critical {:.6e}, post-critical {:.6e}",
        a.worst_ood.pre_critical_max_gap, a.worst_ood.post_critical_max_gap
    )
    .unwrap();
    if let Some(lcm) = &a.lcm {
        writeln!(
            out,
            "LCM of the {} pre-critical integer wavelengths: {} ({} digits)\n  = {}",
            s.critical_index,
            scientific(lcm),
            lcm.to_string().len(),
            lcm
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "{:>5} {:>5} {:>18} {:>6} {:>14} {:>14}", "dim", "pair", "wavelength", "region", "joint_gap", "worst_ood_gap").unwrap();
    let wavelengths = a.schedule.wavelengths();
    for dim in 0..2 * s.pairs {
        let pair = dim / 2;
        writeln!(
            out,
            "{:>5} {:>5} {:>18.6} {:>6} {:>14.6e} {:>14.6e}",
            dim,
            pair,
            wavelengths[pair],
            if s.is_pre_critical(pair) { "pre" } else { "post" },
            a.joint.per_dim_joint_gap[dim],
            a.worst_ood.per_dim_worst_ood_gap[dim]
        )
        .unwrap();
    }
    out
}
