//! Closed-form denoiser for the Gaussian world.
//!
//! The noisy block and every context block are linear observations of the
//! clean sequence:
//!
//! ```text
//! current:  y = (1 - σ_t) x0^(n) + σ_t ε
//! context:  c = (1 - σ_c) x0^(m) + σ_c ξ_m,   ξ_m independent of ε
//! ```
//!
//! The velocity target `ε - x0^(n)` is estimated by its conditional
//! expectation. Since `ε = (y - (1 - σ_t) x0^(n)) / σ_t` holds exactly, the
//! estimate reduces to `(y - E[x0^(n) | obs]) / σ_t`. Channels share the same
//! frame covariance, so one Cholesky factor serves every channel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{noisy_sigma, ContextBundle, Denoiser, GaussianWorld, LatentBlock};
use crate::error::{Error, Result};
use crate::schedule::sigma_unchecked;

/// Posterior of the current block's clean frames.
#[derive(Debug, Clone)]
pub struct Posterior {
    /// Frame-major posterior mean, one entry per value of the block.
    pub mean: Vec<f64>,
    /// Posterior covariance across the block's frames (identical for every channel).
    pub frame_cov: DMatrix<f64>,
}

/// Squared Cholesky pivots below this fraction of the largest variance count as singular.
const MIN_PIVOT_RATIO: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    world: GaussianWorld,
    shift: f64,
}

struct Observation {
    frame: usize,
    signal: f64,
    noise_var: f64,
}

impl OracleDenoiser {
    pub fn new(world: GaussianWorld, shift: f64) -> Self {
        Self { world, shift }
    }

    pub fn world(&self) -> &GaussianWorld {
        &self.world
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Exact Gaussian posterior of `x0` for the noisy block given all observations.
    pub fn posterior(&self, noisy: &LatentBlock, context: &ContextBundle) -> Result<Posterior> {
        let world = &self.world;
        world.check_block(noisy)?;
        let sigma_t = noisy_sigma(noisy, self.shift)?;
        let sigma_c = sigma_unchecked(context.level(), self.shift);
        let d = world.dim();

        // Context observations first, current block last.
        let mut obs = Vec::new();
        let mut values: Vec<&[f64]> = Vec::new();
        for b in context.blocks() {
            world.check_block(b)?;
            if b.frame_range().start < noisy.frame_range().end
                && noisy.frame_range().start < b.frame_range().end
            {
                return Err(Error::InvalidArgument(format!(
                    "context block {} overlaps the noisy block {}",
                    b.index, noisy.index
                )));
            }
            for f in 0..b.frames {
                obs.push(Observation {
                    frame: b.first_frame + f,
                    signal: 1.0 - sigma_c,
                    noise_var: sigma_c * sigma_c,
                });
                values.push(b.frame(f));
            }
        }
        let ctx_len = obs.len();
        for f in 0..noisy.frames {
            obs.push(Observation {
                frame: noisy.first_frame + f,
                signal: 1.0 - sigma_t,
                noise_var: sigma_t * sigma_t,
            });
            values.push(noisy.frame(f));
        }
        let m = obs.len();
        let k = noisy.frames;

        let mut syy = DMatrix::<f64>::zeros(m, m);
        for (i, oi) in obs.iter().enumerate() {
            for (j, oj) in obs.iter().enumerate() {
                syy[(i, j)] = oi.signal * oj.signal * world.frame_cov(oi.frame, oj.frame);
            }
            syy[(i, i)] += oi.noise_var + world.jitter();
        }
        // Cross covariance between the block's clean frames and the observations.
        let mut sxy = DMatrix::<f64>::zeros(k, m);
        for r in 0..k {
            for (j, oj) in obs.iter().enumerate() {
                sxy[(r, j)] = oj.signal * world.frame_cov(noisy.first_frame + r, oj.frame);
            }
        }

        let max_diag = syy.diagonal().max();
        let conditioning = |detail: String| Error::NumericalConditioning {
            context: format!("oracle posterior for block {}", noisy.index),
            detail: format!(
                "{detail}; rho = {}, jitter = {:e}",
                world.rho(),
                world.jitter()
            ),
        };
        let chol: Cholesky<f64, Dyn> = Cholesky::new(syy).ok_or_else(|| {
            conditioning(format!(
                "observation covariance ({m}x{m}) is not positive definite"
            ))
        })?;
        let min_pivot = chol.l_dirty().diagonal().min();
        if min_pivot * min_pivot < MIN_PIVOT_RATIO * max_diag {
            return Err(conditioning(format!(
                "smallest Cholesky pivot {:e} against largest variance {max_diag:e}",
                min_pivot * min_pivot
            )));
        }

        let mut mean = vec![0.0; k * d];
        let mut resid = DVector::<f64>::zeros(m);
        for c in 0..d {
            for (i, o) in obs.iter().enumerate() {
                resid[i] = values[i][c] - o.signal * world.mean_at(o.frame, c);
            }
            let alpha = chol.solve(&resid);
            for r in 0..k {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += sxy[(r, j)] * alpha[j];
                }
                mean[r * d + c] = world.mean_at(noisy.first_frame + r, c) + acc;
            }
        }

        let gain = chol.solve(&sxy.transpose());
        let mut frame_cov = DMatrix::<f64>::zeros(k, k);
        for p in 0..k {
            for q in 0..k {
                frame_cov[(p, q)] = world.frame_cov(noisy.first_frame + p, noisy.first_frame + q);
            }
        }
        frame_cov -= &sxy * gain;
        debug_assert!(ctx_len + k == m);
        Ok(Posterior { mean, frame_cov })
    }
}

impl Denoiser for OracleDenoiser {
    fn velocity(&self, noisy: &LatentBlock, context: &ContextBundle) -> Result<Vec<f64>> {
        let sigma_t = noisy_sigma(noisy, self.shift)?;
        let post = self.posterior(noisy, context)?;
        Ok(noisy
            .values
            .iter()
            .zip(&post.mean)
            .map(|(y, x0)| (y - x0) / sigma_t)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_world() -> GaussianWorld {
        GaussianWorld::new(1, 1, 1, 0.0, 1.0, 0.0).unwrap()
    }

    fn scalar_block(level: f64, value: f64) -> LatentBlock {
        LatentBlock::new(0, 0, 1, 1, level, vec![value]).unwrap()
    }

    #[test]
    fn scalar_symmetric_point_has_zero_velocity() {
        // σ = 0.5: E[x0 | y] = E[ε | y] = y / 1, so the velocity vanishes.
        let oracle = OracleDenoiser::new(scalar_world(), 1.0);
        let v = oracle
            .velocity(&scalar_block(0.5, 1.0), &ContextBundle::empty(0.25))
            .unwrap();
        assert!(v[0].abs() < 1e-9);
    }

    #[test]
    fn scalar_posterior_at_three_quarters() {
        // σ = 0.75 with shift 3 at t = 0.5: E[x0 | y=1] = 0.25 / 0.625 = 0.4, E[ε] = 1.2.
        let oracle = OracleDenoiser::new(scalar_world(), 3.0);
        let noisy = scalar_block(0.5, 1.0);
        let post = oracle
            .posterior(&noisy, &ContextBundle::empty(0.0))
            .unwrap();
        assert!((post.mean[0] - 0.4).abs() < 1e-9);
        let v = oracle.velocity(&noisy, &ContextBundle::empty(0.0)).unwrap();
        assert!((v[0] - 0.8).abs() < 1e-9);
        // One Euler step to σ = 0 lands on the posterior mean.
        assert!((1.0 + v[0] * (0.0 - 0.75) - 0.4).abs() < 1e-10);
        // Posterior variance 1 - 0.25² / 0.625 = 0.9
        assert!((post.frame_cov[(0, 0)] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn pure_noise_context_is_ignored() {
        let world = GaussianWorld::new(2, 2, 3, 0.8, 1.0, 0.3).unwrap();
        let oracle = OracleDenoiser::new(world.clone(), 3.0);
        let noisy = world
            .block_template(1, 0.5)
            .with_values(vec![0.3, -0.2, 1.1, 0.7, 0.0, -0.9], 0.5);
        let ctx_block = world
            .block_template(0, 1.0)
            .with_values(vec![5.0, -3.0, 2.0, 1.0, 4.0, -7.0], 1.0);
        let with = ContextBundle::new(vec![ctx_block], 1.0, false, false).unwrap();
        let a = oracle.velocity(&noisy, &with).unwrap();
        let b = oracle.velocity(&noisy, &ContextBundle::empty(1.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cleaner_context_never_increases_posterior_variance() {
        let world = GaussianWorld::new(2, 1, 1, 0.9, 1.0, 0.0).unwrap();
        let oracle = OracleDenoiser::new(world.clone(), 3.0);
        let noisy = world.block_template(1, 0.5).with_values(vec![0.4], 0.5);
        let mut last = f64::INFINITY;
        for i in (0..=20).rev() {
            let tc = i as f64 / 20.0;
            let ctx = world.block_template(0, tc).with_values(vec![0.1], tc);
            let bundle = ContextBundle::new(vec![ctx], tc, false, true).unwrap();
            let var = oracle.posterior(&noisy, &bundle).unwrap().frame_cov[(0, 0)];
            assert!(var <= last + 1e-12, "t_c = {tc}: {var} > {last}");
            last = var;
        }
    }

    #[test]
    fn response_to_context_shift_is_linear() {
        let world = GaussianWorld::new(2, 2, 2, 0.9, 1.0, 0.0).unwrap();
        let oracle = OracleDenoiser::new(world.clone(), 3.0);
        let noisy = world
            .block_template(1, 0.5)
            .with_values(vec![0.2, 0.1, -0.4, 0.8], 0.5);
        let base = [0.3, -0.6, 0.9, 0.05];
        let run = |delta: f64| {
            let vals: Vec<f64> = base.iter().map(|x| x + delta).collect();
            let b = world.block_template(0, 0.25).with_values(vals, 0.25);
            oracle
                .velocity(
                    &noisy,
                    &ContextBundle::new(vec![b], 0.25, false, true).unwrap(),
                )
                .unwrap()
        };
        let v0 = run(0.0);
        let v1 = run(0.125);
        let v2 = run(0.25);
        for i in 0..v0.len() {
            let s1 = v1[i] - v0[i];
            let s2 = v2[i] - v0[i];
            assert!((s2 - 2.0 * s1).abs() < 1e-12);
        }
    }

    #[test]
    fn near_singular_world_reports_conditioning() {
        let world = GaussianWorld::new(2, 4, 1, 0.999_999_999_999_99, 1.0, 0.0)
            .unwrap()
            .with_jitter(0.0)
            .unwrap();
        let oracle = OracleDenoiser::new(world.clone(), 3.0);
        let noisy = world.block_template(1, 0.25);
        let ctx = world.block_template(0, 0.0);
        let bundle = ContextBundle::new(vec![ctx], 0.0, false, true).unwrap();
        match oracle.velocity(&noisy, &bundle) {
            Err(Error::NumericalConditioning { .. }) => {}
            other => panic!("expected conditioning error, got {other:?}"),
        }
    }

    #[test]
    fn clean_level_noisy_block_is_rejected() {
        let oracle = OracleDenoiser::new(scalar_world(), 3.0);
        assert!(oracle
            .velocity(&scalar_block(0.0, 1.0), &ContextBundle::empty(0.0))
            .is_err());
    }
}
