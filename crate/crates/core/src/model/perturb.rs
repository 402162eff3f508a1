use serde::{Deserialize, Serialize};

use super::{check_velocity_len, noisy_sigma, ContextBundle, Denoiser, LatentBlock};
use crate::error::{invalid, Result};

/// A controlled modification applied on top of a base denoiser's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Perturbation {
    /// Adds a bias to the velocity. A single entry is broadcast to every element.
    Offset(Vec<f64>),
    /// Scales the implied clean estimate `x0 = y - σ v` by `factor`, pulling the
    /// prediction toward zero. `shift` is the schedule shift used to recover `σ`.
    CleanShrink { factor: f64, shift: f64 },
}

/// Which blocks a perturbation applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockSelection {
    All,
    Only(Vec<usize>),
}

impl BlockSelection {
    fn contains(&self, index: usize) -> bool {
        match self {
            BlockSelection::All => true,
            BlockSelection::Only(list) => list.contains(&index),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerturbedDenoiser<D> {
    base: D,
    perturbation: Perturbation,
    blocks: BlockSelection,
}

impl<D: Denoiser> PerturbedDenoiser<D> {
    pub fn new(base: D, perturbation: Perturbation, blocks: BlockSelection) -> Result<Self> {
        match &perturbation {
            Perturbation::Offset(bias) => {
                if bias.is_empty() || bias.iter().any(|b| !b.is_finite()) {
                    return Err(invalid("bias must be non-empty and finite"));
                }
            }
            Perturbation::CleanShrink { factor, shift } => {
                if !factor.is_finite() || !(*shift > 0.0) {
                    return Err(invalid("shrink factor must be finite and shift positive"));
                }
            }
        }
        Ok(Self {
            base,
            perturbation,
            blocks,
        })
    }

    /// Scalar velocity bias on every block.
    pub fn offset(base: D, bias: f64) -> Result<Self> {
        Self::new(base, Perturbation::Offset(vec![bias]), BlockSelection::All)
    }

    pub fn shrink(base: D, factor: f64, shift: f64) -> Result<Self> {
        Self::new(
            base,
            Perturbation::CleanShrink { factor, shift },
            BlockSelection::All,
        )
    }

    pub fn on_blocks(mut self, blocks: BlockSelection) -> Self {
        self.blocks = blocks;
        self
    }

    pub fn base(&self) -> &D {
        &self.base
    }
}

impl<D: Denoiser> Denoiser for PerturbedDenoiser<D> {
    fn velocity(&self, noisy: &LatentBlock, context: &ContextBundle) -> Result<Vec<f64>> {
        let mut v = self.base.velocity(noisy, context)?;
        check_velocity_len(noisy, &v)?;
        if !self.blocks.contains(noisy.index) {
            return Ok(v);
        }
        match &self.perturbation {
            Perturbation::Offset(bias) if bias.len() == 1 => {
                v.iter_mut().for_each(|x| *x += bias[0]);
            }
            Perturbation::Offset(bias) => {
                if bias.len() != v.len() {
                    return Err(invalid(format!(
                        "bias has {} entries, block has {}",
                        bias.len(),
                        v.len()
                    )));
                }
                v.iter_mut().zip(bias).for_each(|(x, b)| *x += b);
            }
            Perturbation::CleanShrink { factor, shift } => {
                let sigma = noisy_sigma(noisy, *shift)?;
                for (x, y) in v.iter_mut().zip(&noisy.values) {
                    let clean = y - sigma * *x;
                    *x = (y - factor * clean) / sigma;
                }
            }
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussianWorld, OracleDenoiser};

    fn setup() -> (OracleDenoiser, LatentBlock) {
        let world = GaussianWorld::new(1, 1, 1, 0.0, 1.0, 0.0).unwrap();
        (
            OracleDenoiser::new(world, 3.0),
            LatentBlock::new(0, 0, 1, 1, 0.5, vec![1.0]).unwrap(),
        )
    }

    #[test]
    fn zero_bias_is_identity() {
        let (oracle, noisy) = setup();
        let ctx = ContextBundle::empty(0.0);
        let p = PerturbedDenoiser::offset(&oracle, 0.0).unwrap();
        assert_eq!(
            p.velocity(&noisy, &ctx).unwrap(),
            oracle.velocity(&noisy, &ctx).unwrap()
        );
    }

    #[test]
    fn scalar_bias_adds() {
        let (oracle, noisy) = setup();
        let ctx = ContextBundle::empty(0.0);
        let p = PerturbedDenoiser::offset(&oracle, 0.3).unwrap();
        let v = p.velocity(&noisy, &ctx).unwrap();
        assert!((v[0] - (0.8 + 0.3)).abs() < 1e-9);
    }

    #[test]
    fn selection_limits_blocks() {
        let (oracle, noisy) = setup();
        let ctx = ContextBundle::empty(0.0);
        let p = PerturbedDenoiser::offset(&oracle, 0.3)
            .unwrap()
            .on_blocks(BlockSelection::Only(vec![3]));
        assert_eq!(
            p.velocity(&noisy, &ctx).unwrap(),
            oracle.velocity(&noisy, &ctx).unwrap()
        );
    }

    #[test]
    fn shrink_scales_clean_estimate() {
        let (oracle, noisy) = setup();
        let ctx = ContextBundle::empty(0.0);
        let p = PerturbedDenoiser::shrink(&oracle, 0.5, 3.0).unwrap();
        let v = p.velocity(&noisy, &ctx).unwrap();
        // clean estimate 0.4 halves to 0.2; landing at σ = 0 gives 0.2
        assert!((1.0 - 0.75 * v[0] - 0.2).abs() < 1e-9);
        let unit = PerturbedDenoiser::shrink(&oracle, 1.0, 3.0).unwrap();
        let v1 = unit.velocity(&noisy, &ctx).unwrap();
        let v0 = oracle.velocity(&noisy, &ctx).unwrap();
        assert!((v1[0] - v0[0]).abs() < 1e-12);
    }

    #[test]
    fn vector_bias_length_checked() {
        let (oracle, noisy) = setup();
        let p = PerturbedDenoiser::new(
            &oracle,
            Perturbation::Offset(vec![1.0, 2.0]),
            BlockSelection::All,
        )
        .unwrap();
        assert!(p.velocity(&noisy, &ContextBundle::empty(0.0)).is_err());
        assert!(PerturbedDenoiser::offset(&oracle, f64::NAN).is_err());
    }
}
