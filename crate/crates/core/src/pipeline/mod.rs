//! Wavefront execution of step-first generation.
//!
//! Stage `j` owns denoising step `j`. Block `n` at stage `j` needs block `n`
//! from stage `j - 1` and the committed context of blocks `< n` at stage `j`,
//! so all cells on one anti-diagonal can run at once.

mod executor;
mod plan;
mod scheduler;

pub use executor::{run_pipelined, PipelineAbort, PipelineOptions, PipelineRun};
pub use plan::{
    antidiagonal_schedule, count_passes, count_plan, FusedCount, Pass, PassCount,
    PassDecomposition, PassKind, PassOp, PlanKind, StagePlan,
};
pub use scheduler::{
    assign_stages, simulate, simulate_speedup, stage_plans, worker_programs, Clock, CostModel,
    MessageRecord, ProgramItem, SpeedupRow, Timeline, TraceRecord, WorkerProgram,
};
