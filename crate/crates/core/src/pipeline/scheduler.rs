//! Worker programs and the logical clock shared by the threaded executor and
//! the simulator.
//!
//! A pass starts when its worker is free and, if it denoises a block, when
//! that block's input has arrived from the previous stage. Hand-offs between
//! workers pay `comm_latency`; hand-offs inside one worker are free.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::plan::{Pass, PassKind, PlanKind, StagePlan};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub pass_cost: f64,
    pub comm_latency: f64,
}

impl CostModel {
    pub const UNIT: CostModel = CostModel {
        pass_cost: 1.0,
        comm_latency: 0.0,
    };

    pub fn new(pass_cost: f64, comm_latency: f64) -> Result<Self> {
        let c = Self {
            pass_cost,
            comm_latency,
        };
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.pass_cost > 0.0 && self.pass_cost.is_finite()) {
            return Err(invalid(format!(
                "pass_cost must be positive, got {}",
                self.pass_cost
            )));
        }
        if !(self.comm_latency >= 0.0 && self.comm_latency.is_finite()) {
            return Err(invalid(format!(
                "comm_latency must be non-negative, got {}",
                self.comm_latency
            )));
        }
        Ok(())
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self::UNIT
    }
}

/// One scheduled pass: which stage runs it and its position in the stage plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramItem {
    pub stage: usize,
    pub index: usize,
    pub pass: Pass,
}

/// The passes one worker runs, in order.
#[derive(Debug, Clone)]
pub struct WorkerProgram {
    pub worker: usize,
    pub stages: Range<usize>,
    pub items: Vec<ProgramItem>,
}

/// Contiguous, balanced stage ranges for `workers` workers.
pub fn assign_stages(steps: usize, workers: usize) -> Result<Vec<Range<usize>>> {
    if workers == 0 || workers > steps {
        return Err(invalid(format!(
            "worker count {workers} must be in 1..={steps}"
        )));
    }
    Ok((0..workers)
        .map(|w| w * steps / workers..(w + 1) * steps / workers)
        .collect())
}

pub fn stage_plans(blocks: usize, steps: usize, kind: PlanKind) -> Result<Vec<StagePlan>> {
    (0..steps)
        .map(|j| StagePlan::new(j, blocks, kind))
        .collect()
}

/// Orders each worker's passes block by block, stage by stage within a
/// block, and appends the trailing passes of its stages.
pub fn worker_programs(plans: &[StagePlan], workers: usize) -> Result<Vec<WorkerProgram>> {
    let ranges = assign_stages(plans.len(), workers)?;
    let blocks = plans.first().map_or(0, |p| p.blocks);
    let split: Vec<_> = plans
        .iter()
        .map(|p| {
            let mut offset = 0;
            let (segs, tail) = p.segments();
            let mut indexed = Vec::new();
            for seg in segs {
                indexed.push((offset, seg.clone()));
                offset += seg.len();
            }
            (indexed, (offset, tail))
        })
        .collect();
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(worker, stages)| {
            let mut items = Vec::new();
            for n in 0..blocks {
                for j in stages.clone() {
                    let (offset, seg) = &split[j].0[n];
                    for (k, pass) in seg.iter().enumerate() {
                        items.push(ProgramItem {
                            stage: j,
                            index: offset + k,
                            pass: pass.clone(),
                        });
                    }
                }
            }
            for j in stages.clone() {
                let (offset, tail) = &split[j].1;
                for (k, pass) in tail.iter().enumerate() {
                    items.push(ProgramItem {
                        stage: j,
                        index: offset + k,
                        pass: pass.clone(),
                    });
                }
            }
            WorkerProgram {
                worker,
                stages,
                items,
            }
        })
        .collect())
}

/// Per-worker logical clock.
#[derive(Debug, Clone)]
pub struct Clock {
    cost: CostModel,
    free_at: f64,
}

impl Clock {
    pub fn new(cost: CostModel) -> Self {
        Self { cost, free_at: 0.0 }
    }

    /// Books the next pass given when its input is ready; returns `(start, end)`.
    pub fn book(&mut self, ready: f64) -> (f64, f64) {
        let start = self.free_at.max(ready);
        let end = start + self.cost.pass_cost;
        self.free_at = end;
        (start, end)
    }

    /// Arrival time of a hand-off sent at `sent`.
    pub fn arrival(&self, sent: f64, same_worker: bool) -> f64 {
        if same_worker {
            sent
        } else {
            sent + self.cost.comm_latency
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: f64,
    pub end: f64,
    pub worker: usize,
    pub stage: usize,
    /// Position of the pass in its stage plan.
    pub pass_index: usize,
    pub block: Option<usize>,
    pub pass_kind: PassKind,
    /// Anti-diagonal `n + j` of the cell the pass produces or commits.
    pub wave: Option<usize>,
}

impl TraceRecord {
    pub fn new(worker: usize, item: &ProgramItem, start: f64, end: f64) -> Self {
        let block = item.pass.block();
        Self {
            tick: start,
            end,
            worker,
            stage: item.stage,
            pass_index: item.index,
            block,
            pass_kind: item.pass.kind,
            wave: block.map(|n| n + item.stage),
        }
    }
}

/// A stage-to-stage hand-off of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub from_stage: usize,
    pub to_stage: usize,
    pub block: usize,
    pub tick: f64,
    pub arrival: f64,
}

pub(crate) fn sort_trace(trace: &mut [TraceRecord]) {
    trace.sort_by(|a, b| {
        a.tick
            .total_cmp(&b.tick)
            .then(a.stage.cmp(&b.stage))
            .then(a.pass_index.cmp(&b.pass_index))
    });
}

pub(crate) fn sort_messages(messages: &mut [MessageRecord]) {
    messages.sort_by(|a, b| {
        a.tick
            .total_cmp(&b.tick)
            .then(a.from_stage.cmp(&b.from_stage))
            .then(a.block.cmp(&b.block))
    });
}

/// Timing of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub makespan: f64,
    pub trace: Vec<TraceRecord>,
    pub messages: Vec<MessageRecord>,
}

impl Timeline {
    pub(crate) fn from_records(
        mut trace: Vec<TraceRecord>,
        mut messages: Vec<MessageRecord>,
    ) -> Self {
        sort_trace(&mut trace);
        sort_messages(&mut messages);
        let makespan = trace.iter().map(|r| r.end).fold(0.0, f64::max);
        Self {
            makespan,
            trace,
            messages,
        }
    }
}

/// Replays the worker programs on the logical clock without doing any numerics.
pub fn simulate(plans: &[StagePlan], workers: usize, cost: CostModel) -> Result<Timeline> {
    cost.check()?;
    let programs = worker_programs(plans, workers)?;
    let steps = plans.len();
    let owner: Vec<usize> = {
        let mut v = vec![0; steps];
        for p in &programs {
            for j in p.stages.clone() {
                v[j] = p.worker;
            }
        }
        v
    };
    let mut clocks: Vec<Clock> = programs.iter().map(|_| Clock::new(cost)).collect();
    let mut cursor = vec![0usize; programs.len()];
    // (stage, block) -> arrival time at the next stage
    let mut arrivals: HashMap<(usize, usize), f64> = HashMap::new();
    let mut trace = Vec::new();
    let mut messages = Vec::new();
    loop {
        let mut progressed = false;
        let mut finished = true;
        for (w, program) in programs.iter().enumerate() {
            while let Some(item) = program.items.get(cursor[w]) {
                let ready = match item.pass.denoised() {
                    Some(n) if item.stage > 0 => match arrivals.get(&(item.stage - 1, n)) {
                        Some(&t) => t,
                        None => break,
                    },
                    _ => 0.0,
                };
                let (start, end) = clocks[w].book(ready);
                trace.push(TraceRecord::new(w, item, start, end));
                if let Some(n) = item.pass.denoised() {
                    if item.stage + 1 < steps {
                        let same = owner[item.stage + 1] == w;
                        let arrival = clocks[w].arrival(end, same);
                        arrivals.insert((item.stage, n), arrival);
                        messages.push(MessageRecord {
                            from_stage: item.stage,
                            to_stage: item.stage + 1,
                            block: n,
                            tick: end,
                            arrival,
                        });
                    }
                }
                cursor[w] += 1;
                progressed = true;
            }
            finished &= cursor[w] == program.items.len();
        }
        if finished {
            break;
        }
        if !progressed {
            return Err(Error::Invariant("worker programs deadlock".into()));
        }
    }
    Ok(Timeline::from_records(trace, messages))
}

/// Sequential and pipelined makespans of one pass plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub plan: PlanKind,
    pub passes_per_stage: usize,
    pub sequential: f64,
    pub pipelined: f64,
    pub speedup: f64,
}

/// Simulated speedup of `steps` workers over one, for every pass plan.
pub fn simulate_speedup(blocks: usize, steps: usize, cost: CostModel) -> Result<Vec<SpeedupRow>> {
    use super::plan::FusedCount;
    [
        PlanKind::Ideal,
        PlanKind::Naive,
        PlanKind::Fused(FusedCount::Stated),
        PlanKind::Fused(FusedCount::Itemised),
    ]
    .into_iter()
    .map(|kind| {
        let plans = stage_plans(blocks, steps, kind)?;
        let sequential = simulate(&plans, 1, cost)?.makespan;
        let pipelined = simulate(&plans, steps, cost)?.makespan;
        Ok(SpeedupRow {
            plan: kind,
            passes_per_stage: plans[0].len(),
            sequential,
            pipelined,
            speedup: sequential / pipelined,
        })
    })
    .collect()
}
