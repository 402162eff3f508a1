//! Block-first and hierarchical (step-first) generation orders.
//!
//! Block-first runs all `S` steps on a block before starting the next, and
//! conditions on the finished predictions of earlier blocks. Hierarchical
//! generation runs step `j` across every block before step `j + 1`, so each
//! block sees its predecessors at the output level of the same step.

mod grid;
mod store;

pub use grid::GenerationGrid;
pub use store::ContextStore;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ContextBundle, Denoiser, GaussianWorld, LatentBlock};
use crate::rng;
use crate::schedule::{euler_step, NoiseSchedule};

/// Noise level at which preceding blocks are presented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextLevel {
    /// Finished predictions at `t_c = 0`; block-first order only.
    CleanZero,
    /// `t_c = t_j`, the input level of the current step.
    InputLevel,
    /// `t_c = t_{j+1}`, the output level of the current step.
    OutputLevel,
}

impl ContextLevel {
    pub const ALL: [ContextLevel; 3] = [
        ContextLevel::CleanZero,
        ContextLevel::InputLevel,
        ContextLevel::OutputLevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ContextLevel::CleanZero => "clean-zero",
            ContextLevel::InputLevel => "input-level",
            ContextLevel::OutputLevel => "output-level",
        }
    }

    /// Grid column holding the context for step `j` of an `S`-step schedule.
    pub fn column(self, j: usize, steps: usize) -> usize {
        match self {
            ContextLevel::CleanZero => steps,
            ContextLevel::InputLevel => j,
            ContextLevel::OutputLevel => j + 1,
        }
    }
}

impl fmt::Display for ContextLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean-zero" => Ok(ContextLevel::CleanZero),
            "input-level" => Ok(ContextLevel::InputLevel),
            "output-level" => Ok(ContextLevel::OutputLevel),
            other => Err(invalid(format!(
                "unknown context policy `{other}` (expected clean-zero, input-level or output-level)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPolicy {
    pub level: ContextLevel,
    /// Renoise clean context with fresh noise before use. Only meaningful for
    /// `CleanZero`, where `σ_0 = 0` leaves the values unchanged.
    pub renoise_clean: bool,
}

impl ContextPolicy {
    pub fn new(level: ContextLevel) -> Self {
        Self {
            level,
            renoise_clean: false,
        }
    }

    pub fn is_block_first(self) -> bool {
        self.level == ContextLevel::CleanZero
    }
}

impl From<ContextLevel> for ContextPolicy {
    fn from(level: ContextLevel) -> Self {
        Self::new(level)
    }
}

/// Parameters shared by both generation orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub policy: ContextPolicy,
    pub blocks: usize,
    /// Maximum number of context blocks; `None` for unbounded.
    pub window: Option<usize>,
    pub seed: u64,
}

impl RunSpec {
    pub fn new(level: ContextLevel, blocks: usize, seed: u64) -> Self {
        Self {
            policy: ContextPolicy::new(level),
            blocks,
            window: None,
            seed,
        }
    }

    pub fn with_window(mut self, window: Option<usize>) -> Self {
        self.window = window;
        self
    }

    pub(crate) fn check(&self, world: &GaussianWorld) -> Result<()> {
        if self.blocks == 0 || self.blocks > world.blocks() {
            return Err(invalid(format!(
                "block count {} must be in 1..={}",
                self.blocks,
                world.blocks()
            )));
        }
        if self.policy.renoise_clean && self.policy.level != ContextLevel::CleanZero {
            return Err(invalid(
                "renoise_clean applies only to the clean-zero policy",
            ));
        }
        Ok(())
    }
}

/// Initial noise for every block, one independent draw per block.
pub fn initial_noise(world: &GaussianWorld, blocks: usize, seed: u64) -> Vec<LatentBlock> {
    (0..blocks)
        .map(|n| {
            let mut b = world.block_template(n, 1.0);
            b.values = rng::standard_normals(
                rng::derive_seed(seed, rng::STREAM_INITIAL, n as u64),
                b.values.len(),
            );
            b
        })
        .collect()
}

/// Context for denoising block `n` at step `j` (0-based), read from `store`.
///
/// Every block the window exposes must be populated in the grid at the
/// policy's column.
pub fn context_for(
    grid: &GenerationGrid,
    store: &ContextStore,
    policy: ContextPolicy,
    n: usize,
    j: usize,
) -> Result<ContextBundle> {
    let steps = grid.steps();
    if j >= steps || n >= grid.blocks() {
        return Err(invalid(format!("step {j} / block {n} outside the grid")));
    }
    let column = policy.level.column(j, steps);
    for m in store.visible_range(n) {
        grid.require(m, column)?;
    }
    let level = grid.times()[column];
    let causal = level <= grid.times()[j + 1];
    let blocks = store.before(column, n)?;
    ContextBundle::new(blocks, level, false, causal)
}

/// One Euler step of block `input` from level `j` to `j + 1`.
pub fn denoise_cell<D: Denoiser + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    input: &LatentBlock,
    j: usize,
    context: &ContextBundle,
) -> Result<LatentBlock> {
    let v = denoiser.velocity(input, context)?;
    let values = euler_step(
        &input.values,
        &v,
        schedule.sigma_at(j),
        schedule.sigma_at(j + 1),
    )?;
    Ok(input.with_values(values, schedule.time(j + 1)))
}

fn seeded_grid(
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    spec: &RunSpec,
) -> Result<GenerationGrid> {
    let mut grid = GenerationGrid::new(spec.blocks, schedule.times());
    for b in initial_noise(world, spec.blocks, spec.seed) {
        grid.set(b.index, 0, b)?;
    }
    Ok(grid)
}

/// Conventional order: each block is fully denoised before the next starts.
pub fn generate_block_first<D: Denoiser + ?Sized>(
    denoiser: &D,
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    spec: &RunSpec,
) -> Result<GenerationGrid> {
    spec.check(world)?;
    if spec.policy.level != ContextLevel::CleanZero {
        return Err(invalid(format!(
            "block-first generation requires the clean-zero policy, got {}",
            spec.policy.level
        )));
    }
    let steps = schedule.steps();
    let mut grid = seeded_grid(world, schedule, spec)?;
    let mut store = ContextStore::new(spec.window)?;
    for n in 0..spec.blocks {
        for j in 0..steps {
            let mut ctx = context_for(&grid, &store, spec.policy, n, j)?;
            if spec.policy.renoise_clean {
                let seed = rng::derive_seed(spec.seed, rng::STREAM_RENOISE, (n * steps + j) as u64);
                ctx = ctx.renoise(0.0, schedule.shift(), seed)?;
            }
            let out = denoise_cell(denoiser, schedule, grid.require(n, j)?, j, &ctx)?;
            grid.set(n, j + 1, out)?;
        }
        store.insert(steps, grid.require(n, steps)?.clone())?;
    }
    Ok(grid)
}

/// Step-first order: a causal sweep over all blocks at every step.
///
/// Context for step `j` is written to a per-step store as the sweep passes,
/// so block `n` reads the freshly computed cells of blocks `< n`.
pub fn generate_hierarchical<D: Denoiser + ?Sized>(
    denoiser: &D,
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    spec: &RunSpec,
) -> Result<GenerationGrid> {
    spec.check(world)?;
    if spec.policy.level == ContextLevel::CleanZero {
        return Err(invalid(
            "hierarchical generation does not accept the clean-zero policy",
        ));
    }
    let mut grid = seeded_grid(world, schedule, spec)?;
    for j in 0..schedule.steps() {
        let mut store = ContextStore::new(spec.window)?;
        let column = spec.policy.level.column(j, schedule.steps());
        for n in 0..spec.blocks {
            let ctx = context_for(&grid, &store, spec.policy, n, j)?;
            let out = denoise_cell(denoiser, schedule, grid.require(n, j)?, j, &ctx)?;
            grid.set(n, j + 1, out)?;
            store.insert(column, grid.require(n, column)?.clone())?;
        }
    }
    Ok(grid)
}

/// Dispatches on the policy: clean-zero runs block-first, the others step-first.
pub fn generate<D: Denoiser + ?Sized>(
    denoiser: &D,
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    spec: &RunSpec,
) -> Result<GenerationGrid> {
    if spec.policy.is_block_first() {
        generate_block_first(denoiser, world, schedule, spec)
    } else {
        generate_hierarchical(denoiser, world, schedule, spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OracleDenoiser;
    use crate::schedule::make_schedule;

    fn desk() -> (GaussianWorld, NoiseSchedule, OracleDenoiser) {
        let world = GaussianWorld::new(5, 2, 2, 0.9, 1.0, 0.0).unwrap();
        let schedule = NoiseSchedule::default();
        let oracle = OracleDenoiser::new(world.clone(), schedule.shift());
        (world, schedule, oracle)
    }

    #[test]
    fn policy_order_mismatch_is_rejected() {
        let (w, s, o) = desk();
        let spec = RunSpec::new(ContextLevel::OutputLevel, 3, 1);
        assert!(generate_block_first(&o, &w, &s, &spec).is_err());
        let spec = RunSpec::new(ContextLevel::CleanZero, 3, 1);
        assert!(generate_hierarchical(&o, &w, &s, &spec).is_err());
        let spec = RunSpec::new(ContextLevel::InputLevel, 6, 1);
        assert!(generate_hierarchical(&o, &w, &s, &spec).is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        for level in ContextLevel::ALL {
            assert_eq!(level.name().parse::<ContextLevel>().unwrap(), level);
        }
        assert!("t0".parse::<ContextLevel>().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let (w, s, o) = desk();
        for level in ContextLevel::ALL {
            let spec = RunSpec::new(level, 4, 17);
            let a = generate(&o, &w, &s, &spec).unwrap();
            let b = generate(&o, &w, &s, &spec).unwrap();
            assert_eq!(a, b);
            assert!(a.is_complete());
        }
    }

    #[test]
    fn context_for_first_block_is_empty() {
        let (w, s, _) = desk();
        let spec = RunSpec::new(ContextLevel::OutputLevel, 3, 1);
        let grid = seeded_grid(&w, &s, &spec).unwrap();
        let store = ContextStore::new(None).unwrap();
        let ctx = context_for(&grid, &store, spec.policy, 0, 0).unwrap();
        assert!(ctx.is_empty());
        assert_eq!(ctx.level(), s.time(1));
    }

    #[test]
    fn output_level_context_at_last_step_is_clean() {
        let (w, s, o) = desk();
        let spec = RunSpec::new(ContextLevel::OutputLevel, 3, 1);
        let grid = generate(&o, &w, &s, &spec).unwrap();
        let mut store = ContextStore::new(None).unwrap();
        for n in 0..2 {
            store
                .insert(s.steps(), grid.require(n, s.steps()).unwrap().clone())
                .unwrap();
        }
        let ctx = context_for(&grid, &store, spec.policy, 2, s.steps() - 1).unwrap();
        assert_eq!(ctx.level(), 0.0);
        assert!(ctx.is_causal());
        assert_eq!(ctx.blocks().len(), 2);
    }

    #[test]
    fn window_limits_context_to_recent_blocks() {
        let (w, s, o) = desk();
        let spec = RunSpec::new(ContextLevel::OutputLevel, 5, 1);
        let grid = generate(&o, &w, &s, &spec).unwrap();
        let mut store = ContextStore::new(Some(2)).unwrap();
        for n in 0..4 {
            store
                .insert(1, grid.require(n, 1).unwrap().clone())
                .unwrap();
        }
        let ctx = context_for(&grid, &store, spec.policy, 4, 0).unwrap();
        let idx: Vec<usize> = ctx.blocks().iter().map(|b| b.index).collect();
        assert_eq!(idx, vec![2, 3]);
    }

    #[test]
    fn input_level_records_causality_violation() {
        let (w, s, _) = desk();
        let spec = RunSpec::new(ContextLevel::InputLevel, 2, 1);
        let grid = seeded_grid(&w, &s, &spec).unwrap();
        let mut store = ContextStore::new(None).unwrap();
        store
            .insert(0, grid.require(0, 0).unwrap().clone())
            .unwrap();
        let ctx = context_for(&grid, &store, spec.policy, 1, 0).unwrap();
        assert!(!ctx.is_causal());
        assert_eq!(ctx.level(), 1.0);
    }

    #[test]
    fn unpopulated_context_cells_are_an_invalid_state() {
        let (w, s, _) = desk();
        let spec = RunSpec::new(ContextLevel::OutputLevel, 3, 1);
        let grid = seeded_grid(&w, &s, &spec).unwrap();
        let store = ContextStore::new(None).unwrap();
        assert!(matches!(
            context_for(&grid, &store, spec.policy, 1, 0),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn hierarchical_fill_respects_dependencies() {
        let (w, s, o) = desk();
        let spec = RunSpec::new(ContextLevel::OutputLevel, 5, 3);
        let grid = generate(&o, &w, &s, &spec).unwrap();
        let pos = |c: (usize, usize)| grid.fill_order().iter().position(|&x| x == c).unwrap();
        for n in 0..5 {
            for j in 1..=s.steps() {
                assert!(pos((n, j - 1)) < pos((n, j)));
                if n > 0 {
                    assert!(pos((n - 1, j)) < pos((n, j)));
                }
            }
        }
    }

    #[test]
    fn large_window_matches_unbounded() {
        let (w, s, o) = desk();
        for level in ContextLevel::ALL {
            let spec = RunSpec::new(level, 5, 8);
            let a = generate(&o, &w, &s, &spec).unwrap();
            let b = generate(&o, &w, &s, &spec.with_window(Some(5))).unwrap();
            assert_eq!(a, b);
            let c = generate(&o, &w, &s, &spec.with_window(Some(2))).unwrap();
            assert!(c.is_complete());
        }
    }

    #[test]
    fn one_step_output_level_conditions_on_clean_outputs() {
        let (w, _, _) = desk();
        let s = make_schedule(3.0, &[]).unwrap();
        let o = OracleDenoiser::new(w.clone(), s.shift());
        let spec = RunSpec::new(ContextLevel::OutputLevel, 3, 2);
        let a = generate(&o, &w, &s, &spec).unwrap();
        let b = generate(&o, &w, &s, &RunSpec::new(ContextLevel::CleanZero, 3, 2)).unwrap();
        // With a single step both orders perform the same causal pass.
        assert!(a.same_cells(&b));
    }

    #[test]
    fn renoised_clean_context_matches_plain() {
        let (w, s, o) = desk();
        let plain = RunSpec::new(ContextLevel::CleanZero, 3, 4);
        let mut renoised = plain;
        renoised.policy.renoise_clean = true;
        let a = generate(&o, &w, &s, &plain).unwrap();
        let b = generate(&o, &w, &s, &renoised).unwrap();
        assert_eq!(a, b);
    }
}
