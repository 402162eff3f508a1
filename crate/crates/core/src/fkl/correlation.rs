use serde::{Deserialize, Serialize};

use super::teacher::{sample_sequence, SamplingMode};
use crate::analysis::{dynamics, pearson};
use crate::error::{invalid, Result};
use crate::model::{Denoiser, GaussianWorld, OracleDenoiser, PerturbedDenoiser};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentDynamics {
    pub label: String,
    /// Seed-averaged dynamics of whole-sequence sampling.
    pub bidirectional: f64,
    /// Seed-averaged dynamics of causal step-first sampling.
    pub causal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStudy {
    pub students: Vec<StudentDynamics>,
    pub pearson: f64,
}

/// Students whose clean estimate is scaled by each factor.
pub fn shrinkage_students(
    oracle: &OracleDenoiser,
    factors: &[f64],
) -> Result<Vec<(String, PerturbedDenoiser<OracleDenoiser>)>> {
    factors
        .iter()
        .map(|&f| {
            Ok((
                format!("shrink-{f}"),
                PerturbedDenoiser::shrink(oracle.clone(), f, oracle.shift())?,
            ))
        })
        .collect()
}

fn mean_dynamics<D: Denoiser>(
    student: &D,
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    mode: SamplingMode,
    seeds: &[u64],
) -> Result<f64> {
    let mut total = 0.0;
    for &seed in seeds {
        let seq = sample_sequence(student, world, schedule, mode, seed)?;
        let frames: Vec<Vec<f64>> = (0..seq.frames).map(|f| seq.frame(f).to_vec()).collect();
        total += dynamics(&frames)?;
    }
    Ok(total / seeds.len() as f64)
}

/// Measures each student's dynamics in both sampling modes and correlates them.
pub fn dynamics_correlation_study<D: Denoiser>(
    students: &[(String, D)],
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    seeds: &[u64],
) -> Result<CorrelationStudy> {
    if students.len() < 3 {
        return Err(invalid(format!(
            "correlation study needs at least 3 students, got {}",
            students.len()
        )));
    }
    if seeds.is_empty() {
        return Err(invalid("correlation study needs at least one seed"));
    }
    let rows = students
        .iter()
        .map(|(label, s)| {
            Ok(StudentDynamics {
                label: label.clone(),
                bidirectional: mean_dynamics(
                    s,
                    world,
                    schedule,
                    SamplingMode::Bidirectional,
                    seeds,
                )?,
                causal: mean_dynamics(s, world, schedule, SamplingMode::Causal, seeds)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.bidirectional).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.causal).collect();
    let r = pearson(&xs, &ys)?;
    Ok(CorrelationStudy {
        students: rows,
        pearson: r,
    })
}
