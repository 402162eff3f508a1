use std::fmt;

use serde::{Deserialize, Serialize};

use super::stats::linear_slope;
use crate::error::{invalid, Result};

pub const SEGMENTS: usize = 5;
/// Added to the first-segment magnitude when normalising slopes.
pub const NORMALISER_EPS: f64 = 1e-8;

/// Per-segment statistics standing in for perceptual quality metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMetric {
    /// Mean absolute value (saturation).
    MeanAbs,
    /// Variance of the discrete Laplacian along the channel axis (sharpness).
    LaplacianVar,
    /// Cosine similarity to the neighbouring frame (coherence).
    Cosine,
    /// Squared distance to the neighbouring frame (coherence).
    SqDistance,
}

impl DriftMetric {
    pub const ALL: [DriftMetric; 4] = [
        DriftMetric::MeanAbs,
        DriftMetric::LaplacianVar,
        DriftMetric::Cosine,
        DriftMetric::SqDistance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DriftMetric::MeanAbs => "mean-abs",
            DriftMetric::LaplacianVar => "laplacian-var",
            DriftMetric::Cosine => "cosine",
            DriftMetric::SqDistance => "sq-distance",
        }
    }
}

impl fmt::Display for DriftMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Weights and optional fixed normalisers, one per metric in [`DriftMetric::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    pub weights: [f64; 4],
    /// `None` normalises each slope by `|segment 1 value| + 1e-8`.
    pub normalisers: Option<[f64; 4]>,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            weights: [0.25; 4],
            normalisers: None,
        }
    }
}

impl DriftConfig {
    pub fn check(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("drift weights must be non-negative"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("drift weights must sum to 1, got {sum}")));
        }
        if let Some(n) = &self.normalisers {
            if n.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(invalid("drift normalisers must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDrift {
    pub metric: DriftMetric,
    pub values: [f64; SEGMENTS],
    pub slope: f64,
    pub normaliser: f64,
    pub normalised_slope: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub frames_per_segment: usize,
    pub metrics: Vec<MetricDrift>,
    /// `Σ weight · |normalised slope|`.
    pub aggregate: f64,
}

fn laplacian_values(frame: &[f64]) -> impl Iterator<Item = f64> + '_ {
    frame.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2])
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn segment_stat(metric: DriftMetric, frames: &[Vec<f64>], range: std::ops::Range<usize>) -> f64 {
    // Each frame is paired with its predecessor; frame 0 borrows the pair (0, 1).
    let pair = |i: usize| {
        let i = i.max(1);
        (&frames[i - 1], &frames[i])
    };
    let count = range.len() as f64;
    match metric {
        DriftMetric::MeanAbs => {
            let (sum, n) = range.fold((0.0, 0usize), |(s, n), i| {
                (
                    s + frames[i].iter().map(|x| x.abs()).sum::<f64>(),
                    n + frames[i].len(),
                )
            });
            sum / n as f64
        }
        DriftMetric::LaplacianVar => {
            let lap: Vec<f64> = range.flat_map(|i| laplacian_values(&frames[i])).collect();
            if lap.is_empty() {
                return 0.0;
            }
            let m = lap.iter().sum::<f64>() / lap.len() as f64;
            lap.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / lap.len() as f64
        }
        DriftMetric::Cosine => {
            range
                .map(|i| {
                    let (a, b) = pair(i);
                    cosine(a, b)
                })
                .sum::<f64>()
                / count
        }
        DriftMetric::SqDistance => {
            range
                .map(|i| {
                    let (a, b) = pair(i);
                    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
                })
                .sum::<f64>()
                / count
        }
    }
}

/// Splits `frames` into five equal segments (dropping the remainder), fits a
/// line to each metric over segment index 1..5 and aggregates the normalised
/// slopes.
pub fn drift_score(frames: &[Vec<f64>], config: &DriftConfig) -> Result<DriftReport> {
    config.check()?;
    if frames.len() < SEGMENTS {
        return Err(invalid(format!(
            "drift needs at least {SEGMENTS} frames, got {}",
            frames.len()
        )));
    }
    let d = frames[0].len();
    if d == 0 || frames.iter().any(|f| f.len() != d) {
        return Err(invalid("frames must share a positive dimension"));
    }
    let per = frames.len() / SEGMENTS;
    let mut metrics = Vec::with_capacity(DriftMetric::ALL.len());
    let mut aggregate = 0.0;
    for (k, metric) in DriftMetric::ALL.into_iter().enumerate() {
        let mut values = [0.0; SEGMENTS];
        for (s, v) in values.iter_mut().enumerate() {
            *v = segment_stat(metric, frames, s * per..(s + 1) * per);
        }
        let slope = linear_slope(&values);
        let normaliser = match &config.normalisers {
            Some(n) => n[k],
            None => values[0].abs() + NORMALISER_EPS,
        };
        let normalised_slope = slope / normaliser;
        let weight = config.weights[k];
        aggregate += weight * normalised_slope.abs();
        metrics.push(MetricDrift {
            metric,
            values,
            slope,
            normaliser,
            normalised_slope,
            weight,
        });
    }
    Ok(DriftReport {
        frames_per_segment: per,
        metrics,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sequence_has_no_drift() {
        let frames = vec![vec![0.5, -1.0, 2.0, 0.1]; 23];
        let r = drift_score(&frames, &DriftConfig::default()).unwrap();
        assert_eq!(r.frames_per_segment, 4);
        assert!(r.metrics.iter().all(|m| m.slope == 0.0));
        assert_eq!(r.aggregate, 0.0);
    }

    #[test]
    fn linear_growth_gives_unit_slope() {
        // One frame per segment with |x| = 1..5.
        let frames: Vec<Vec<f64>> = (1..=5).map(|i| vec![i as f64]).collect();
        let r = drift_score(&frames, &DriftConfig::default()).unwrap();
        let m = &r.metrics[0];
        assert_eq!(m.values, [1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m.slope, 1.0);
        assert!((m.normalised_slope - 1.0 / (1.0 + 1e-8)).abs() < 1e-15);
        // d = 1 has no Laplacian; every neighbour differs by one.
        assert_eq!(r.metrics[1].values, [0.0; 5]);
        assert_eq!(r.metrics[3].values, [1.0; 5]);
        assert_eq!(r.metrics[2].values, [1.0; 5]);
    }

    #[test]
    fn laplacian_variance_by_hand() {
        // Laplacians of [0, 1, 0, 1] are [-2, 2]: variance 4.
        let frames = vec![vec![0.0, 1.0, 0.0, 1.0]; 5];
        let r = drift_score(&frames, &DriftConfig::default()).unwrap();
        assert_eq!(r.metrics[1].values, [4.0; 5]);
    }

    #[test]
    fn aggregate_uses_weights_and_normalisers() {
        let frames: Vec<Vec<f64>> = (1..=10).map(|i| vec![i as f64, 0.0, -(i as f64)]).collect();
        let config = DriftConfig {
            weights: [1.0, 0.0, 0.0, 0.0],
            normalisers: Some([2.0, 1.0, 1.0, 1.0]),
        };
        let r = drift_score(&frames, &config).unwrap();
        // Segment means of |x| over pairs of frames: (2i-1+2i)/2 * 2/3 -> slope 4/3.
        assert!((r.metrics[0].slope - 4.0 / 3.0).abs() < 1e-12);
        assert!((r.aggregate - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(drift_score(&vec![vec![1.0]; 4], &DriftConfig::default()).is_err());
        let bad = DriftConfig {
            weights: [0.5, 0.5, 0.5, 0.0],
            normalisers: None,
        };
        assert!(drift_score(&vec![vec![1.0]; 5], &bad).is_err());
        let bad = DriftConfig {
            weights: [0.25; 4],
            normalisers: Some([1.0, 0.0, 1.0, 1.0]),
        };
        assert!(drift_score(&vec![vec![1.0]; 5], &bad).is_err());
    }
}
