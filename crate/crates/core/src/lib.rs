//! Rotary position embedding laboratory.
//!
//! The crate is `no_std` (with `alloc`) so the numerical pieces can be reused
//! anywhere; the `std` feature only switches on runtime CPU dispatch in the
//! matrix kernels and `std::error::Error` plumbing in dependencies.
//!
//! Layout:
//! - [`rope`]: frequency schedules, wavelengths, critical split, rotation.
//! - [`scaling`]: NTK-aware, dynamic NTK, YaRN and Resonance transforms.
//! - [`gap`]: train/test feature-gap analysis and the resonance LCM.
//! - [`posgen`]: the PosGen synthetic tasks, splits and OOD accuracy.
//! - [`model`]: a small causal transformer with hand-written gradients,
//!   AdamW and a teacher-forced evaluator.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod gap;
pub mod model;
pub mod posgen;
pub mod rng;
pub mod rope;
pub mod scaling;

pub use error::{Error, Result};
pub use gap::{embedded_vector_distance, feature_gap, resonance_lcm, GapMode, GapReport};
pub use posgen::{PosGenSpec, SemiVariant, SequenceSample, Subtask, Token};
pub use rope::{CriticalSplit, ThetaSchedule};
pub use scaling::{ScalingMethod, ScalingSpec, ScalingStep};
