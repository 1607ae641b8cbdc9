//! JSON form of a [`ThetaSchedule`].

use anyhow::{Context, Result};
use resonance_core::{ScalingStep, ThetaSchedule};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

#[derive(Serialize)]
struct Outgoing<'a> {
    head_dim: usize,
    rotary_base: f64,
    thetas: &'a [f64],
    wavelengths: Vec<Box<RawValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    integer_wavelengths: Option<&'a [u64]>,
    scaling_trace: &'a [ScalingStep],
}

#[derive(Deserialize)]
struct Incoming {
    head_dim: usize,
    rotary_base: f64,
    thetas: Vec<f64>,
    #[serde(default)]
    integer_wavelengths: Option<Vec<u64>>,
    #[serde(default)]
    scaling_trace: Vec<ScalingStep>,
}

/// Pretty JSON with wavelengths printed to six decimals. Frequencies keep
/// full precision so the document round-trips exactly.
pub fn to_json(schedule: &ThetaSchedule) -> String {
    let wavelengths = schedule
        .wavelengths()
        .iter()
        .map(|w| RawValue::from_string(format!("{w:.6}")).expect("finite wavelength"))
        .collect();
    let doc = Outgoing {
        head_dim: schedule.head_dim(),
        rotary_base: schedule.rotary_base(),
        thetas: schedule.thetas(),
        wavelengths,
        integer_wavelengths: schedule.integer_wavelengths(),
        scaling_trace: schedule.scaling_trace(),
    };
    serde_json::to_string_pretty(&doc).expect("schedule serializes")
}

/// Parses and re-validates a schedule document. Stored wavelengths are
/// ignored and recomputed from the frequencies.
pub fn from_json(text: &str) -> Result<ThetaSchedule> {
    let doc: Incoming = serde_json::from_str(text).context("parsing schedule document")?;
    let schedule = ThetaSchedule::from_parts(
        doc.head_dim,
        doc.rotary_base,
        doc.thetas,
        doc.integer_wavelengths,
        doc.scaling_trace,
    )?;
    Ok(schedule)
}
