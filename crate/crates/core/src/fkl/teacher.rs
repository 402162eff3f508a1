use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::generate::{denoise_cell, generate_hierarchical, initial_noise, ContextLevel, RunSpec};
use crate::model::{ContextBundle, Denoiser, GaussianWorld, LatentBlock, OracleDenoiser};
use crate::schedule::{make_schedule, NoiseSchedule};

/// How a sequence is denoised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// The whole sequence as one block at a shared level, no causal context.
    Bidirectional,
    /// Step-first causal sweep with output-level context.
    Causal,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::Bidirectional => "bidirectional",
            SamplingMode::Causal => "causal",
        })
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bidirectional" => Ok(SamplingMode::Bidirectional),
            "causal" => Ok(SamplingMode::Causal),
            other => Err(invalid(format!("unknown sampling mode `{other}`"))),
        }
    }
}

/// A dense teacher trajectory and its checkpoints on the student schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherTrajectory {
    pub mode: SamplingMode,
    pub blocks: usize,
    pub frames_per_block: usize,
    pub dim: usize,
    /// Dense times, from 1 down to 0.
    pub times: Vec<f64>,
    /// Whole-sequence state at each dense time, frame-major.
    pub states: Vec<Vec<f64>>,
    /// Positions in `times` of the student's schedule levels.
    pub checkpoint_indices: Vec<usize>,
}

impl TeacherTrajectory {
    pub fn checkpoints(&self) -> Vec<&[f64]> {
        self.checkpoint_indices
            .iter()
            .map(|&i| self.states[i].as_slice())
            .collect()
    }

    pub fn checkpoint_times(&self) -> Vec<f64> {
        self.checkpoint_indices
            .iter()
            .map(|&i| self.times[i])
            .collect()
    }

    /// Checkpoint `i` split back into its blocks.
    pub fn checkpoint_blocks(&self, i: usize) -> Vec<LatentBlock> {
        let t = self.times[self.checkpoint_indices[i]];
        let state = &self.states[self.checkpoint_indices[i]];
        let len = self.frames_per_block * self.dim;
        (0..self.blocks)
            .map(|n| LatentBlock {
                index: n,
                first_frame: n * self.frames_per_block,
                frames: self.frames_per_block,
                dim: self.dim,
                level: t,
                values: state[n * len..(n + 1) * len].to_vec(),
            })
            .collect()
    }

    /// Checkpoint `i` as a single whole-sequence block.
    pub fn checkpoint_sequence(&self, i: usize) -> LatentBlock {
        let idx = self.checkpoint_indices[i];
        LatentBlock {
            index: 0,
            first_frame: 0,
            frames: self.blocks * self.frames_per_block,
            dim: self.dim,
            level: self.times[idx],
            values: self.states[idx].clone(),
        }
    }
}

/// Dense time grid containing every schedule time.
///
/// `dense_steps` are spread over the schedule's intervals as evenly as
/// possible (earlier intervals take the remainder), uniformly in time inside
/// each interval. Returns the times and the checkpoint positions.
pub fn dense_times(schedule: &NoiseSchedule, dense_steps: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let steps = schedule.steps();
    if dense_steps < steps {
        return Err(invalid(format!(
            "dense trajectory needs at least {steps} steps, got {dense_steps}"
        )));
    }
    let times = schedule.times();
    let (base, extra) = (dense_steps / steps, dense_steps % steps);
    let mut dense = vec![times[0]];
    let mut checkpoints = vec![0];
    for j in 0..steps {
        let count = base + usize::from(j < extra);
        let (a, b) = (times[j], times[j + 1]);
        for i in 1..count {
            dense.push(a + (b - a) * i as f64 / count as f64);
        }
        dense.push(b);
        checkpoints.push(dense.len() - 1);
    }
    Ok((dense, checkpoints))
}

/// Samples a trajectory with the closed-form teacher for `world`.
pub fn sample_teacher_trajectory(
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    dense_steps: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<TeacherTrajectory> {
    let teacher = OracleDenoiser::new(world.clone(), schedule.shift());
    sample_trajectory_with(&teacher, world, schedule, dense_steps, mode, seed)
}

/// Samples a trajectory with an arbitrary teacher denoiser.
///
/// Both modes start from the same per-block initial noise as the generators.
pub fn sample_trajectory_with<D: Denoiser + ?Sized>(
    teacher: &D,
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    dense_steps: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<TeacherTrajectory> {
    let (times, checkpoint_indices) = dense_times(schedule, dense_steps)?;
    let dense = make_schedule(schedule.shift(), &times)?;
    let states = match mode {
        SamplingMode::Bidirectional => {
            let noise = initial_noise(world, world.blocks(), seed);
            let mut x = LatentBlock::concat(&noise)?;
            let mut states = vec![x.values.clone()];
            for j in 0..dense.steps() {
                let ctx = ContextBundle::empty(dense.time(j + 1));
                x = denoise_cell(teacher, &dense, &x, j, &ctx)?;
                states.push(x.values.clone());
            }
            states
        }
        SamplingMode::Causal => {
            let spec = RunSpec::new(ContextLevel::OutputLevel, world.blocks(), seed);
            let grid = generate_hierarchical(teacher, world, &dense, &spec)?;
            (0..=dense.steps())
                .map(|j| {
                    Ok(grid
                        .column(j)?
                        .iter()
                        .flat_map(|b| b.values.iter().copied())
                        .collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()?
        }
    };
    Ok(TeacherTrajectory {
        mode,
        blocks: world.blocks(),
        frames_per_block: world.frames_per_block(),
        dim: world.dim(),
        times,
        states,
        checkpoint_indices,
    })
}

/// Final clean sequence produced by `denoiser` in `mode` on the schedule itself.
pub fn sample_sequence<D: Denoiser + ?Sized>(
    denoiser: &D,
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    mode: SamplingMode,
    seed: u64,
) -> Result<LatentBlock> {
    let traj = sample_trajectory_with(denoiser, world, schedule, schedule.steps(), mode, seed)?;
    Ok(traj.checkpoint_sequence(schedule.steps()))
}
