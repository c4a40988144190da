//! Fidelity-optimal watermarking of finite distributions.
//!
//! Given a base distribution `F` over a finite state space and a binary
//! detector with detection region `S`, the crate computes the smallest
//! f-divergence any watermarked distribution must pay to meet a false-positive
//! rate `alpha = F(S)` and a false-negative rate `beta`, builds the
//! distribution `G*` that attains it, and realizes `G*` three ways: exactly,
//! by two-rate rejection sampling from `F`, and by KL-regularized policy
//! optimization. A best-of-m baseline and an experiment harness round it out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod distribution;
pub mod divergence;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod optimal;
pub mod policy;
pub mod sampler;

pub use detector::{calibrate, hash_score, load_scores, CalibrationRecord, ScoreFunction, ThresholdDetector};
pub use distribution::{ingest_csv, CsvOptions, FiniteDistribution, State, StateSet, Support};
pub use divergence::{f_divergence, lower_bound, Bound, ErrorRates, FGenerator};
pub use error::{Error, Result};
pub use optimal::WatermarkPlan;
