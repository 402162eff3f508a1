//! Measurements on generated sequences: context-error decomposition, bias
//! propagation, segment drift, dynamics and correlation.

mod decompose;
mod drift;
mod propagation;
mod stats;

pub use decompose::{decompose_context, ErrorDecomposition};
pub use drift::{
    drift_score, DriftConfig, DriftMetric, DriftReport, MetricDrift, NORMALISER_EPS, SEGMENTS,
};
pub use propagation::{drift_under_bias, propagation_curve, DriftRow, PropagationRow};
pub use stats::{dynamics, linear_slope, pearson};
