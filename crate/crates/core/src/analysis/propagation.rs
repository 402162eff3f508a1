use serde::{Deserialize, Serialize};

use super::drift::{drift_score, DriftConfig, DriftReport};
use crate::error::Result;
use crate::generate::{generate, ContextLevel, GenerationGrid, RunSpec};
use crate::model::{BlockSelection, Denoiser, GaussianWorld, Perturbation, PerturbedDenoiser};
use crate::schedule::NoiseSchedule;

/// Downstream effect of a velocity bias injected into block 0 only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationRow {
    pub policy: ContextLevel,
    pub seed: u64,
    pub delta_scale: f64,
    /// Norm of the final-level difference over blocks `1..N`.
    pub downstream: f64,
    /// Norm of the final-level difference on the last block.
    pub final_block: f64,
}

fn final_difference(a: &GenerationGrid, b: &GenerationGrid, from_block: usize) -> Result<Vec<f64>> {
    let s = a.steps();
    let mut norms = Vec::new();
    for n in from_block..a.blocks() {
        let x = a.require(n, s)?;
        let y = b.require(n, s)?;
        norms.push(
            x.values
                .iter()
                .zip(&y.values)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>(),
        );
    }
    Ok(norms)
}

/// Runs every policy with and without the block-0 bias on paired seeds.
///
/// The unbiased and biased runs share all noise draws, so the difference is
/// the bias pathway alone.
pub fn propagation_curve<D: Denoiser>(
    base: &D,
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    policies: &[ContextLevel],
    delta_scale: f64,
    seeds: &[u64],
) -> Result<Vec<PropagationRow>> {
    let biased = PerturbedDenoiser::new(
        base,
        Perturbation::Offset(vec![delta_scale]),
        BlockSelection::Only(vec![0]),
    )?;
    let mut rows = Vec::with_capacity(policies.len() * seeds.len());
    for &policy in policies {
        for &seed in seeds {
            let spec = RunSpec::new(policy, world.blocks(), seed);
            let clean = generate(base, world, schedule, &spec)?;
            let hit = generate(&biased, world, schedule, &spec)?;
            let sq = final_difference(&clean, &hit, 1)?;
            rows.push(PropagationRow {
                policy,
                seed,
                delta_scale,
                downstream: sq.iter().sum::<f64>().sqrt(),
                final_block: sq.last().copied().unwrap_or(0.0).sqrt(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub policy: ContextLevel,
    pub seed: u64,
    pub report: DriftReport,
}

/// Drift of the final-level frame sequence when every block's velocity carries `bias`.
pub fn drift_under_bias<D: Denoiser>(
    base: &D,
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    policies: &[ContextLevel],
    bias: f64,
    seeds: &[u64],
    config: &DriftConfig,
) -> Result<Vec<DriftRow>> {
    let biased = PerturbedDenoiser::offset(base, bias)?;
    let mut rows = Vec::with_capacity(policies.len() * seeds.len());
    for &policy in policies {
        for &seed in seeds {
            let grid = generate(
                &biased,
                world,
                schedule,
                &RunSpec::new(policy, world.blocks(), seed),
            )?;
            let report = drift_score(&grid.final_frames()?, config)?;
            rows.push(DriftRow {
                policy,
                seed,
                report,
            });
        }
    }
    Ok(rows)
}
