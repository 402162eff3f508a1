//! Synthetic data world, latent containers and the denoiser interface.

mod oracle;
mod perturb;
mod student;
mod world;

pub use oracle::{OracleDenoiser, Posterior};
pub use perturb::{BlockSelection, Perturbation, PerturbedDenoiser};
pub use student::{fit_linear_student, LinearStudent, StudentSample};
pub use world::{corrupt, sample_clean, GaussianWorld, DEFAULT_JITTER};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::schedule::sigma_unchecked;

/// A contiguous run of latent frames living at one noise level.
///
/// `values` is frame-major: element `(f, c)` sits at `f * dim + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBlock {
    pub index: usize,
    pub first_frame: usize,
    pub frames: usize,
    pub dim: usize,
    pub level: f64,
    pub values: Vec<f64>,
}

impl LatentBlock {
    pub fn new(
        index: usize,
        first_frame: usize,
        frames: usize,
        dim: usize,
        level: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != frames * dim {
            return Err(invalid(format!(
                "block {index}: expected {} values, got {}",
                frames * dim,
                values.len()
            )));
        }
        if !(0.0..=1.0).contains(&level) {
            return Err(invalid(format!(
                "block {index}: level {level} outside [0, 1]"
            )));
        }
        Ok(Self {
            index,
            first_frame,
            frames,
            dim,
            level,
            values,
        })
    }

    /// Same layout and position, different values and level.
    pub fn with_values(&self, values: Vec<f64>, level: f64) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            level,
            ..self.clone()
        }
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        &self.values[f * self.dim..(f + 1) * self.dim]
    }

    pub fn frame_range(&self) -> std::ops::Range<usize> {
        self.first_frame..self.first_frame + self.frames
    }

    /// Concatenates consecutive blocks into one block starting at the first one.
    pub fn concat(blocks: &[LatentBlock]) -> Result<LatentBlock> {
        let first = blocks
            .first()
            .ok_or_else(|| invalid("cannot concatenate zero blocks"))?;
        let mut values = Vec::new();
        let mut next_frame = first.first_frame;
        for b in blocks {
            if b.first_frame != next_frame || b.dim != first.dim || b.level != first.level {
                return Err(invalid("blocks are not contiguous at a shared level"));
            }
            next_frame += b.frames;
            values.extend_from_slice(&b.values);
        }
        LatentBlock::new(
            first.index,
            first.first_frame,
            next_frame - first.first_frame,
            first.dim,
            first.level,
            values,
        )
    }
}

/// Preceding blocks presented to the denoiser as conditioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    blocks: Vec<LatentBlock>,
    level: f64,
    renoised: bool,
    /// Whether the context level satisfies `t_c <= t_{j+1}` for the step it serves.
    causal: bool,
}

impl ContextBundle {
    pub fn empty(level: f64) -> Self {
        Self {
            blocks: Vec::new(),
            level,
            renoised: false,
            causal: true,
        }
    }

    pub fn new(blocks: Vec<LatentBlock>, level: f64, renoised: bool, causal: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&level) {
            return Err(invalid(format!("context level {level} outside [0, 1]")));
        }
        if let Some(b) = blocks.iter().find(|b| b.level != level) {
            return Err(invalid(format!(
                "context block {} is at level {}, bundle level is {level}",
                b.index, b.level
            )));
        }
        if blocks.windows(2).any(|w| w[1].index <= w[0].index) {
            return Err(invalid("context block indices must be strictly increasing"));
        }
        Ok(Self {
            blocks,
            level,
            renoised,
            causal,
        })
    }

    pub fn blocks(&self) -> &[LatentBlock] {
        &self.blocks
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn is_renoised(&self) -> bool {
        self.renoised
    }

    pub fn is_causal(&self) -> bool {
        self.causal
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Presents every block at `level` as `(1 - σ) x + σ η` with fresh noise `η`.
    ///
    /// The bundle's blocks are taken as clean predictions. One noise stream is
    /// drawn per block from `seed`.
    pub fn renoise(&self, level: f64, shift: f64, seed: u64) -> Result<Self> {
        let sigma = crate::schedule::sigma(level, shift)?;
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let eta = rng::standard_normals(
                    rng::derive_seed(seed, rng::STREAM_RENOISE, b.index as u64),
                    b.values.len(),
                );
                let values = renoise_values(&b.values, &eta, sigma);
                b.with_values(values, level)
            })
            .collect();
        Ok(Self {
            blocks,
            level,
            renoised: true,
            causal: self.causal,
        })
    }
}

/// `(1 - σ) x + σ η`, elementwise.
pub fn renoise_values(clean: &[f64], eta: &[f64], sigma: f64) -> Vec<f64> {
    clean
        .iter()
        .zip(eta)
        .map(|(x, e)| (1.0 - sigma) * x + sigma * e)
        .collect()
}

/// Maps a noisy block and its context to a velocity of the same length.
///
/// Implementations must be deterministic: identical inputs give identical outputs.
pub trait Denoiser: Send + Sync {
    fn velocity(&self, noisy: &LatentBlock, context: &ContextBundle) -> Result<Vec<f64>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn velocity(&self, noisy: &LatentBlock, context: &ContextBundle) -> Result<Vec<f64>> {
        (**self).velocity(noisy, context)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn velocity(&self, noisy: &LatentBlock, context: &ContextBundle) -> Result<Vec<f64>> {
        (**self).velocity(noisy, context)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Arc<D> {
    fn velocity(&self, noisy: &LatentBlock, context: &ContextBundle) -> Result<Vec<f64>> {
        (**self).velocity(noisy, context)
    }
}

pub(crate) fn check_velocity_len(noisy: &LatentBlock, v: &[f64]) -> Result<()> {
    if v.len() != noisy.values.len() {
        return Err(Error::Invariant(format!(
            "denoiser returned {} values for a block of {}",
            v.len(),
            noisy.values.len()
        )));
    }
    Ok(())
}

pub(crate) fn noisy_sigma(noisy: &LatentBlock, shift: f64) -> Result<f64> {
    let s = sigma_unchecked(noisy.level, shift);
    if !(s > 0.0) {
        return Err(invalid(format!(
            "block {} is at level {}; a velocity needs a positive noise level",
            noisy.index, noisy.level
        )));
    }
    Ok(s)
}
