use serde::{Deserialize, Serialize};

use super::LatentBlock;
use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;

/// Default diagonal jitter added before every positive-definite solve.
pub const DEFAULT_JITTER: f64 = 1e-10;

/// Joint Gaussian over all frames of a sequence.
///
/// Covariance is `variance * rho^|p - q|` across frames and the identity
/// across the `dim` channels of a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianWorld {
    blocks: usize,
    frames_per_block: usize,
    dim: usize,
    mean: Vec<f64>,
    rho: f64,
    variance: f64,
    jitter: f64,
}

impl GaussianWorld {
    /// Builds a world with a constant mean.
    pub fn new(
        blocks: usize,
        frames_per_block: usize,
        dim: usize,
        rho: f64,
        variance: f64,
        mean: f64,
    ) -> Result<Self> {
        let len = blocks * frames_per_block * dim;
        Self::with_mean(
            blocks,
            frames_per_block,
            dim,
            rho,
            variance,
            vec![mean; len],
        )
    }

    pub fn with_mean(
        blocks: usize,
        frames_per_block: usize,
        dim: usize,
        rho: f64,
        variance: f64,
        mean: Vec<f64>,
    ) -> Result<Self> {
        if blocks == 0 || frames_per_block == 0 || dim == 0 {
            return Err(invalid("world sizes must be positive"));
        }
        if !(rho > -1.0 && rho < 1.0) {
            return Err(invalid(format!(
                "frame correlation {rho} must lie in (-1, 1)"
            )));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(invalid(format!(
                "variance must be positive, got {variance}"
            )));
        }
        let len = blocks * frames_per_block * dim;
        if mean.len() != len {
            return Err(invalid(format!(
                "mean has {} entries, expected {len}",
                mean.len()
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("mean must be finite"));
        }
        Ok(Self {
            blocks,
            frames_per_block,
            dim,
            mean,
            rho,
            variance,
            jitter: DEFAULT_JITTER,
        })
    }

    pub fn with_jitter(mut self, jitter: f64) -> Result<Self> {
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(invalid("jitter must be non-negative"));
        }
        self.jitter = jitter;
        Ok(self)
    }

    /// Desk-scale default: 8 blocks of 3 frames, 4 channels, `rho = 0.9`.
    pub fn desk() -> Self {
        Self::new(8, 3, 4, 0.9, 1.0, 0.0).expect("desk world is valid")
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn frames_per_block(&self) -> usize {
        self.frames_per_block
    }

    pub fn frames_total(&self) -> usize {
        self.blocks * self.frames_per_block
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn mean_at(&self, frame: usize, channel: usize) -> f64 {
        self.mean[frame * self.dim + channel]
    }

    /// Covariance between frames `p` and `q` of a single channel.
    pub fn frame_cov(&self, p: usize, q: usize) -> f64 {
        self.variance * self.rho.powi(p.abs_diff(q) as i32)
    }

    /// Layout of block `n`: an empty block at `level` positioned in the sequence.
    pub fn block_template(&self, n: usize, level: f64) -> LatentBlock {
        let k = self.frames_per_block;
        LatentBlock {
            index: n,
            first_frame: n * k,
            frames: k,
            dim: self.dim,
            level,
            values: vec![0.0; k * self.dim],
        }
    }

    pub(crate) fn check_block(&self, b: &LatentBlock) -> Result<()> {
        if b.dim != self.dim || b.first_frame + b.frames > self.frames_total() {
            return Err(invalid(format!(
                "block {} (frames {:?}, dim {}) does not fit the world ({} frames, dim {})",
                b.index,
                b.frame_range(),
                b.dim,
                self.frames_total(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// Draws a clean sequence from the world, split into its blocks at level 0.
///
/// Channels are independent AR(1) chains, sampled recursively so the draw is
/// exact for any `|rho| < 1`.
pub fn sample_clean(world: &GaussianWorld, seed: u64) -> Vec<LatentBlock> {
    let frames = world.frames_total();
    let d = world.dim;
    let z = rng::standard_normals(rng::derive_seed(seed, rng::STREAM_CLEAN, 0), frames * d);
    let sd = world.variance.sqrt();
    let innovation = (world.variance * (1.0 - world.rho * world.rho)).sqrt();
    let mut centred = vec![0.0; frames * d];
    for c in 0..d {
        centred[c] = sd * z[c];
        for f in 1..frames {
            centred[f * d + c] = world.rho * centred[(f - 1) * d + c] + innovation * z[f * d + c];
        }
    }
    (0..world.blocks)
        .map(|n| {
            let mut b = world.block_template(n, 0.0);
            let start = b.first_frame * d;
            for (i, v) in b.values.iter_mut().enumerate() {
                *v = world.mean[start + i] + centred[start + i];
            }
            b
        })
        .collect()
}

/// Forward corruption `(1 - σ_t) x0 + σ_t ε` with `ε` drawn from `seed`.
pub fn corrupt(
    x0: &LatentBlock,
    t: f64,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<LatentBlock> {
    if x0.level != 0.0 {
        return Err(Error::InvalidState(format!(
            "block {} is at level {}, corruption expects a clean block",
            x0.index, x0.level
        )));
    }
    let sigma = crate::schedule::sigma(t, schedule.shift())?;
    let eps = rng::standard_normals(
        rng::derive_seed(seed, rng::STREAM_CORRUPT, x0.index as u64),
        x0.values.len(),
    );
    let values = super::renoise_values(&x0.values, &eps, sigma);
    Ok(x0.with_values(values, t))
}
