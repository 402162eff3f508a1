use super::teacher::{SamplingMode, TeacherTrajectory};
use crate::error::{invalid, Result};
use crate::model::{ContextBundle, Denoiser, LatentBlock};
use crate::schedule::NoiseSchedule;

/// Weight of the trajectory term in the combined objective.
pub const DEFAULT_LAMBDA: f64 = 0.1;
/// Number of leading student steps the trajectory term constrains.
pub const DEFAULT_CONSTRAINED_STEPS: usize = 1;

fn squared_error_per_frame(v: &[f64], target: &[f64], frames: usize) -> f64 {
    v.iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / frames as f64
}

/// Trajectory-matching loss over the first `k` checkpoint pairs.
///
/// For each pair the student velocity at checkpoint `i` is compared with the
/// finite difference `(x_{i+1} - x_i) / (σ_{i+1} - σ_i)`. The squared error is
/// summed over channels, averaged over frames, then averaged over the `k`
/// pairs. The student sees the trajectory the way it was sampled: the whole
/// sequence at once, or block by block with the next checkpoint as context.
pub fn fkl_loss<D: Denoiser + ?Sized>(
    student: &D,
    trajectory: &TeacherTrajectory,
    schedule: &NoiseSchedule,
    k: usize,
) -> Result<f64> {
    let steps = schedule.steps();
    if k == 0 || k > steps {
        return Err(invalid(format!(
            "constrained steps must be in 1..={steps}, got {k}"
        )));
    }
    if trajectory.checkpoint_indices.len() != steps + 1 {
        return Err(invalid(format!(
            "trajectory has {} checkpoints, schedule needs {}",
            trajectory.checkpoint_indices.len(),
            steps + 1
        )));
    }
    let times = trajectory.checkpoint_times();
    if times.iter().zip(schedule.times()).any(|(a, b)| a != b) {
        return Err(invalid(
            "trajectory checkpoints do not sit on the schedule times",
        ));
    }
    let mut total = 0.0;
    for i in 0..k {
        let h = schedule.sigma_at(i + 1) - schedule.sigma_at(i);
        if h == 0.0 || !h.is_finite() {
            return Err(invalid(format!("noise levels {i} and {} coincide", i + 1)));
        }
        let term = match trajectory.mode {
            SamplingMode::Bidirectional => {
                let x = trajectory.checkpoint_sequence(i);
                let next = trajectory.checkpoint_sequence(i + 1);
                let v = student.velocity(&x, &ContextBundle::empty(schedule.time(i + 1)))?;
                let target: Vec<f64> = x
                    .values
                    .iter()
                    .zip(&next.values)
                    .map(|(a, b)| (b - a) / h)
                    .collect();
                squared_error_per_frame(&v, &target, x.frames)
            }
            SamplingMode::Causal => {
                let now = trajectory.checkpoint_blocks(i);
                let next = trajectory.checkpoint_blocks(i + 1);
                let mut sum = 0.0;
                let mut frames = 0;
                for (n, x) in now.iter().enumerate() {
                    let context: Vec<LatentBlock> = next[..n].to_vec();
                    let ctx = ContextBundle::new(context, schedule.time(i + 1), false, true)?;
                    let v = student.velocity(x, &ctx)?;
                    let target: Vec<f64> = x
                        .values
                        .iter()
                        .zip(&next[n].values)
                        .map(|(a, b)| (b - a) / h)
                        .collect();
                    sum += squared_error_per_frame(&v, &target, 1);
                    frames += x.frames;
                }
                sum / frames as f64
            }
        };
        total += term;
    }
    Ok(total / k as f64)
}

/// `dmd + lambda * fkl`.
pub fn total_loss(dmd: f64, fkl: f64, lambda: f64) -> Result<f64> {
    if !(dmd.is_finite() && fkl.is_finite() && lambda.is_finite()) {
        return Err(invalid("loss terms must be finite"));
    }
    if lambda < 0.0 {
        return Err(invalid(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    Ok(dmd + lambda * fkl)
}
