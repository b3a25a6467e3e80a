//! Two-tier nano-abnormality detection.
//!
//! Sensor nano-machines (SNMs) observe a molecular channel whose noise is
//! correlated in time and across sensors, run a two-sided GLRT against the
//! healthy feature value and report binary alarms over a noisy micro-scale
//! channel to a data-gathering node (DGN), which applies a MAP threshold to
//! the summed signal.
//!
//! Layers, bottom up:
//!
//! * [`ncc_channel`] ligand-binding physics producing the feature values
//! * [`covariance`] temporal/spatial correlation, estimator weights, noise sampling
//! * [`snm_detector`] per-sensor estimate, calibration and decision
//! * [`mvn`] randomized-QMC box probabilities for correlated decision variables
//! * [`fusion`] alarm-count distributions and the DGN threshold
//! * [`system_perf`] end-to-end rates and the concentration optimizer
//! * [`montecarlo`] the simulation oracle

// negated comparisons below are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod error;
pub mod fusion;
pub mod montecarlo;
pub mod mvn;
pub mod ncc_channel;
pub mod normal;
pub mod snm_detector;
pub mod streams;
pub mod system_perf;

pub use error::{NadsError, Result};

/// Binary hypothesis: healthy (`H0`) or abnormal (`H1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    H0,
    H1,
}
