//! Per-step affine student fit by ridge-regularised least squares.

use nalgebra::{Cholesky, DMatrix, SVD};

use super::{ContextBundle, Denoiser, LatentBlock};
use crate::error::{invalid, Error, Result};
use crate::fkl::TeacherTrajectory;
use crate::schedule::NoiseSchedule;

/// Relative singular-value floor below which an unregularised design is rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// One regression example: at `step`, features `[input; context; 1]` map to `target`.
#[derive(Debug, Clone)]
pub struct StudentSample {
    pub step: usize,
    pub input: Vec<f64>,
    pub context: Vec<f64>,
    pub target: Vec<f64>,
}

/// Velocity model `v = A_j [x; c; 1]` with one matrix per schedule step.
#[derive(Debug, Clone)]
pub struct LinearStudent {
    step_times: Vec<f64>,
    weights: Vec<Option<DMatrix<f64>>>,
    input_len: usize,
    context_len: usize,
}

impl LinearStudent {
    pub fn fit(schedule: &NoiseSchedule, samples: &[StudentSample], ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(invalid(format!(
                "ridge must be non-negative and finite, got {ridge}"
            )));
        }
        let first = samples
            .first()
            .ok_or_else(|| invalid("at least one sample is required"))?;
        let (input_len, context_len) = (first.input.len(), first.context.len());
        let out_len = first.target.len();
        let steps = schedule.steps();
        for s in samples {
            if s.step >= steps {
                return Err(invalid(format!(
                    "sample step {} beyond schedule of {steps} steps",
                    s.step
                )));
            }
            if s.input.len() != input_len
                || s.context.len() != context_len
                || s.target.len() != out_len
            {
                return Err(invalid(
                    "samples must share input, context and target lengths",
                ));
            }
        }
        let features = input_len + context_len + 1;
        let mut weights = Vec::with_capacity(steps);
        for step in 0..steps {
            let rows: Vec<&StudentSample> = samples.iter().filter(|s| s.step == step).collect();
            if rows.is_empty() {
                weights.push(None);
                continue;
            }
            let phi = DMatrix::from_fn(rows.len(), features, |r, c| {
                let s = rows[r];
                if c < input_len {
                    s.input[c]
                } else if c < input_len + context_len {
                    s.context[c - input_len]
                } else {
                    1.0
                }
            });
            let targets = DMatrix::from_fn(rows.len(), out_len, |r, c| rows[r].target[c]);
            let w = if ridge == 0.0 {
                solve_least_squares(phi, &targets, step)?
            } else {
                solve_ridge(&phi, &targets, ridge, step)?
            };
            weights.push(Some(w.transpose()));
        }
        Ok(Self {
            step_times: schedule.times()[..steps].to_vec(),
            weights,
            input_len,
            context_len,
        })
    }

    /// Weight matrix for `step`, shaped `output x (input + context + 1)`.
    pub fn weights(&self, step: usize) -> Option<&DMatrix<f64>> {
        self.weights.get(step).and_then(|w| w.as_ref())
    }
}

fn solve_least_squares(
    phi: DMatrix<f64>,
    targets: &DMatrix<f64>,
    step: usize,
) -> Result<DMatrix<f64>> {
    let (rows, cols) = phi.shape();
    let deficient = |detail: String| Error::NumericalConditioning {
        context: format!("linear student, step {step}"),
        detail,
    };
    if rows < cols {
        return Err(deficient(format!(
            "{rows} samples cannot determine {cols} coefficients without ridge"
        )));
    }
    let svd = SVD::new(phi, true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(min > RANK_TOLERANCE * max) {
        return Err(deficient(format!(
            "design is rank deficient (singular values {min:e} .. {max:e})"
        )));
    }
    svd.solve(targets, 0.0)
        .map_err(|e| deficient(e.to_string()))
}

fn solve_ridge(
    phi: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    ridge: f64,
    step: usize,
) -> Result<DMatrix<f64>> {
    let cols = phi.ncols();
    let gram = phi.transpose() * phi + DMatrix::<f64>::identity(cols, cols) * ridge;
    let chol = Cholesky::new(gram).ok_or_else(|| Error::NumericalConditioning {
        context: format!("linear student, step {step}"),
        detail: "regularised normal equations are not positive definite".into(),
    })?;
    Ok(chol.solve(&(phi.transpose() * targets)))
}

impl Denoiser for LinearStudent {
    fn velocity(&self, noisy: &LatentBlock, context: &ContextBundle) -> Result<Vec<f64>> {
        let step = self
            .step_times
            .iter()
            .position(|&t| t == noisy.level)
            .ok_or_else(|| {
                invalid(format!(
                    "level {} is not a step of the student's schedule",
                    noisy.level
                ))
            })?;
        let a = self.weights[step]
            .as_ref()
            .ok_or_else(|| Error::InvalidState(format!("student has no fit for step {step}")))?;
        if noisy.values.len() != self.input_len {
            return Err(invalid(format!(
                "student expects {} inputs, got {}",
                self.input_len,
                noisy.values.len()
            )));
        }
        let ctx: Vec<f64> = context
            .blocks()
            .iter()
            .flat_map(|b| b.values.iter().copied())
            .collect();
        if ctx.len() != self.context_len {
            return Err(invalid(format!(
                "student expects {} context values, got {}",
                self.context_len,
                ctx.len()
            )));
        }
        let out = (0..a.nrows())
            .map(|r| {
                let mut acc = a[(r, a.ncols() - 1)];
                for (c, x) in noisy.values.iter().chain(&ctx).enumerate() {
                    acc += a[(r, c)] * x;
                }
                acc
            })
            .collect();
        Ok(out)
    }
}

/// Fits a student to the finite-difference targets of teacher checkpoints.
///
/// Each consecutive checkpoint pair `(x_i, x_{i+1})` contributes the example
/// `x_i -> (x_{i+1} - x_i) / (σ_{i+1} - σ_i)` at step `i`. Context features are
/// empty: trajectories are whole sequences.
pub fn fit_linear_student(
    schedule: &NoiseSchedule,
    trajectories: &[TeacherTrajectory],
    ridge: f64,
) -> Result<LinearStudent> {
    if trajectories.is_empty() {
        return Err(invalid("at least one trajectory is required"));
    }
    let mut samples = Vec::new();
    for traj in trajectories {
        let cps = traj.checkpoints();
        if traj.checkpoint_times() != schedule.times() {
            return Err(invalid(
                "trajectory checkpoints are not aligned with the schedule",
            ));
        }
        for step in 0..schedule.steps() {
            let h = schedule.sigma_at(step + 1) - schedule.sigma_at(step);
            let target = cps[step + 1]
                .iter()
                .zip(cps[step])
                .map(|(b, a)| (b - a) / h)
                .collect();
            samples.push(StudentSample {
                step,
                input: cps[step].to_vec(),
                context: Vec::new(),
                target,
            });
        }
    }
    LinearStudent::fit(schedule, &samples, ridge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::make_schedule;

    fn scalar_sample(x: f64, t: f64) -> StudentSample {
        StudentSample {
            step: 0,
            input: vec![x],
            context: vec![],
            target: vec![t],
        }
    }

    #[test]
    fn one_sample_ridge_matches_closed_form() {
        // Features φ = (x, 1); with one sample the ridge solution is
        // A = t φᵀ / (|φ|² + λ), so the fitted value at x is t |φ|² / (|φ|² + λ).
        let s = make_schedule(1.0, &[]).unwrap();
        let (x, t, lambda) = (2.0, 3.0, 0.5);
        let student = LinearStudent::fit(&s, &[scalar_sample(x, t)], lambda).unwrap();
        let noisy = LatentBlock::new(0, 0, 1, 1, 1.0, vec![x]).unwrap();
        let v = student
            .velocity(&noisy, &ContextBundle::empty(0.0))
            .unwrap();
        let norm2 = x * x + 1.0;
        assert!((v[0] - t * norm2 / (norm2 + lambda)).abs() < 1e-12);
        let a = student.weights(0).unwrap();
        assert!((a[(0, 0)] - t * x / (norm2 + lambda)).abs() < 1e-12);
        assert!((a[(0, 1)] - t / (norm2 + lambda)).abs() < 1e-12);
    }

    #[test]
    fn heavy_ridge_shrinks_to_zero() {
        let s = make_schedule(1.0, &[]).unwrap();
        let samples: Vec<_> = (0..5)
            .map(|i| scalar_sample(i as f64, 2.0 * i as f64 + 1.0))
            .collect();
        let student = LinearStudent::fit(&s, &samples, 1e12).unwrap();
        let noisy = LatentBlock::new(0, 0, 1, 1, 1.0, vec![3.0]).unwrap();
        let v = student
            .velocity(&noisy, &ContextBundle::empty(0.0))
            .unwrap();
        assert!(v[0].abs() < 1e-9);
    }

    #[test]
    fn exact_affine_targets_are_recovered() {
        let s = make_schedule(1.0, &[]).unwrap();
        let samples: Vec<_> = (0..6)
            .map(|i| scalar_sample(i as f64 * 0.7 - 1.0, 1.5 * (i as f64 * 0.7 - 1.0) - 0.25))
            .collect();
        let student = LinearStudent::fit(&s, &samples, 0.0).unwrap();
        let a = student.weights(0).unwrap();
        assert!((a[(0, 0)] - 1.5).abs() < 1e-12);
        assert!((a[(0, 1)] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_without_ridge_fails() {
        let s = make_schedule(1.0, &[]).unwrap();
        match LinearStudent::fit(&s, &[scalar_sample(1.0, 1.0)], 0.0) {
            Err(Error::NumericalConditioning { .. }) => {}
            other => panic!("expected conditioning error, got {other:?}"),
        }
        let same: Vec<_> = (0..4).map(|_| scalar_sample(1.0, 1.0)).collect();
        assert!(matches!(
            LinearStudent::fit(&s, &same, 0.0),
            Err(Error::NumericalConditioning { .. })
        ));
    }

    #[test]
    fn unknown_level_is_rejected() {
        let s = make_schedule(1.0, &[]).unwrap();
        let student = LinearStudent::fit(&s, &[scalar_sample(1.0, 1.0)], 1.0).unwrap();
        let noisy = LatentBlock::new(0, 0, 1, 1, 0.5, vec![1.0]).unwrap();
        assert!(student
            .velocity(&noisy, &ContextBundle::empty(0.0))
            .is_err());
    }
}
