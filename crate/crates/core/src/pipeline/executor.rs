//! Threaded wavefront executor.
//!
//! Each worker owns a contiguous range of stages and their context stores.
//! Blocks travel between workers over FIFO channels, one per adjacent worker
//! pair; a single collector assembles the grid and the logs.

use std::collections::HashMap;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread;
use std::time::Duration;

use rand::Rng;

use super::plan::{PassOp, PlanKind, StagePlan};
use super::scheduler::{
    sort_messages, sort_trace, stage_plans, worker_programs, Clock, CostModel, MessageRecord,
    Timeline, TraceRecord, WorkerProgram,
};
use crate::error::{invalid, Error, Result};
use crate::generate::{
    denoise_cell, initial_noise, ContextLevel, ContextStore, GenerationGrid, RunSpec,
};
use crate::model::{ContextBundle, Denoiser, GaussianWorld, LatentBlock};
use crate::rng;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub plan: PlanKind,
    /// Number of worker threads, `1..=S`.
    pub workers: usize,
    pub cost: CostModel,
    /// Seed for random pauses before each pass, to vary thread interleavings.
    pub jitter: Option<u64>,
}

impl PipelineOptions {
    /// One worker per stage, ideal plan, unit costs.
    pub fn per_stage(steps: usize) -> Self {
        Self {
            plan: PlanKind::Ideal,
            workers: steps,
            cost: CostModel::UNIT,
            jitter: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub grid: GenerationGrid,
    pub makespan: f64,
    pub pass_counts: Vec<usize>,
    pub messages: Vec<MessageRecord>,
    pub trace: Vec<TraceRecord>,
    pub workers: usize,
}

impl PipelineRun {
    pub fn timeline(&self) -> Timeline {
        Timeline {
            makespan: self.makespan,
            trace: self.trace.clone(),
            messages: self.messages.clone(),
        }
    }
}

/// A run that stopped early, with whatever was logged before the failure.
#[derive(Debug)]
pub struct PipelineAbort {
    pub error: Error,
    pub messages: Vec<MessageRecord>,
    pub trace: Vec<TraceRecord>,
}

impl std::fmt::Display for PipelineAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "pipeline aborted after {} passes and {} messages: {}",
            self.trace.len(),
            self.messages.len(),
            self.error
        )
    }
}

impl std::error::Error for PipelineAbort {}

impl From<PipelineAbort> for Error {
    fn from(abort: PipelineAbort) -> Self {
        abort.error
    }
}

impl From<Error> for PipelineAbort {
    fn from(error: Error) -> Self {
        Self {
            error,
            messages: Vec::new(),
            trace: Vec::new(),
        }
    }
}

struct Handoff {
    block: LatentBlock,
    from_stage: usize,
    arrival: f64,
}

enum Event {
    Cell(usize, usize, LatentBlock),
    Trace(TraceRecord),
    Message(MessageRecord),
    Failed(Error),
}

struct Worker<'a, D: ?Sized> {
    program: WorkerProgram,
    denoiser: &'a D,
    schedule: &'a NoiseSchedule,
    noise: &'a [LatentBlock],
    window: Option<usize>,
    cost: CostModel,
    jitter: Option<u64>,
    inbox: Option<Receiver<Handoff>>,
    outbox: Option<Sender<Handoff>>,
    events: Sender<Event>,
}

/// Why a worker stopped before finishing its program.
enum Stop {
    Failed(Error),
    /// A neighbour hung up; the failure is reported by that neighbour.
    Disconnected,
}

impl<D: Denoiser + ?Sized> Worker<'_, D> {
    fn run(mut self) {
        match self.execute() {
            Ok(()) | Err(Stop::Disconnected) => {}
            Err(Stop::Failed(e)) => {
                let _ = self.events.send(Event::Failed(e));
            }
        }
    }

    fn execute(&mut self) -> std::result::Result<(), Stop> {
        let steps = self.schedule.steps();
        let stages = self.program.stages.clone();
        let mut stores: HashMap<usize, ContextStore> = HashMap::new();
        for j in stages.clone() {
            stores.insert(j, ContextStore::new(self.window).map_err(Stop::Failed)?);
        }
        // Latest output of each stage, kept until its cache write.
        let mut outputs: HashMap<(usize, usize), LatentBlock> = HashMap::new();
        // Inputs handed over inside this worker: (stage, block) -> (block, arrival).
        let mut local: HashMap<(usize, usize), (LatentBlock, f64)> = HashMap::new();
        let mut clock = Clock::new(self.cost);
        let mut pause = self
            .jitter
            .map(|s| rng::rng_from(rng::derive_seed(s, 0, self.program.worker as u64)));
        let items = std::mem::take(&mut self.program.items);
        for item in &items {
            if let Some(r) = pause.as_mut() {
                if r.random_bool(0.3) {
                    thread::sleep(Duration::from_micros(r.random_range(1..40)));
                } else {
                    for _ in 0..r.random_range(0..4) {
                        thread::yield_now();
                    }
                }
            }
            let j = item.stage;
            let input = match item.pass.denoised() {
                Some(n) => Some(self.take_input(j, n, stages.start, &mut local)?),
                None => None,
            };
            let ready = input.as_ref().map_or(0.0, |(_, t)| *t);
            let (start, end) = clock.book(ready);
            let mut produced = None;
            for op in &item.pass.ops {
                match *op {
                    PassOp::Write(m) => {
                        let block = outputs.remove(&(j, m)).ok_or_else(|| {
                            Stop::Failed(Error::Invariant(format!(
                                "stage {j} commits block {m} before denoising it"
                            )))
                        })?;
                        stores
                            .get_mut(&j)
                            .expect("store per owned stage")
                            .insert(j + 1, block)
                            .map_err(Stop::Failed)?;
                    }
                    PassOp::Denoise(n) => {
                        let (block, _) = input.as_ref().expect("denoise pass has an input");
                        let ctx = self.context(&stores[&j], j, n).map_err(|e| {
                            Stop::Failed(Error::Invariant(format!("stage {j}, block {n}: {e}")))
                        })?;
                        let out = denoise_cell(self.denoiser, self.schedule, block, j, &ctx)
                            .map_err(|e| {
                                Stop::Failed(Error::WorkerFailed {
                                    stage: j,
                                    reason: e.to_string(),
                                })
                            })?;
                        outputs.insert((j, n), out.clone());
                        produced = Some((n, out));
                    }
                }
            }
            self.emit(Event::Trace(TraceRecord::new(
                self.program.worker,
                item,
                start,
                end,
            )))?;
            if let Some((n, out)) = produced {
                self.emit(Event::Cell(n, j + 1, out.clone()))?;
                if j + 1 < steps {
                    let same = stages.contains(&(j + 1));
                    let arrival = clock.arrival(end, same);
                    self.emit(Event::Message(MessageRecord {
                        from_stage: j,
                        to_stage: j + 1,
                        block: n,
                        tick: end,
                        arrival,
                    }))?;
                    if same {
                        local.insert((j + 1, n), (out, arrival));
                    } else {
                        let outbox = self.outbox.as_ref().ok_or_else(|| {
                            Stop::Failed(Error::Invariant(format!(
                                "stage {j} has no downstream channel"
                            )))
                        })?;
                        outbox
                            .send(Handoff {
                                block: out,
                                from_stage: j,
                                arrival,
                            })
                            .map_err(|_| Stop::Disconnected)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn take_input(
        &self,
        j: usize,
        n: usize,
        first_stage: usize,
        local: &mut HashMap<(usize, usize), (LatentBlock, f64)>,
    ) -> std::result::Result<(LatentBlock, f64), Stop> {
        if j == 0 {
            return Ok((self.noise[n].clone(), 0.0));
        }
        if j > first_stage {
            return local.remove(&(j, n)).ok_or_else(|| {
                Stop::Failed(Error::Invariant(format!(
                    "stage {j} lacks its input for block {n}"
                )))
            });
        }
        let inbox = self.inbox.as_ref().ok_or_else(|| {
            Stop::Failed(Error::Invariant(format!(
                "stage {j} has no upstream channel"
            )))
        })?;
        let h = inbox.recv().map_err(|_| Stop::Disconnected)?;
        if h.block.index != n || h.from_stage + 1 != j {
            return Err(Stop::Failed(Error::Invariant(format!(
                "stage {j} expected block {n} from stage {}, received block {} from stage {}",
                j - 1,
                h.block.index,
                h.from_stage
            ))));
        }
        Ok((h.block, h.arrival))
    }

    fn context(&self, store: &ContextStore, j: usize, n: usize) -> Result<ContextBundle> {
        ContextBundle::new(
            store.before(j + 1, n)?,
            self.schedule.time(j + 1),
            false,
            true,
        )
    }

    fn emit(&self, event: Event) -> std::result::Result<(), Stop> {
        self.events.send(event).map_err(|_| Stop::Disconnected)
    }
}

/// Runs step-first generation with one stage per denoising step, spread over
/// `options.workers` threads.
///
/// The result grid equals [`crate::generate::generate_hierarchical`] for the
/// same spec; only the timing depends on the options.
pub fn run_pipelined<D: Denoiser + ?Sized>(
    denoiser: &D,
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    spec: &RunSpec,
    options: &PipelineOptions,
) -> std::result::Result<PipelineRun, PipelineAbort> {
    spec.check(world)?;
    if spec.policy.level != ContextLevel::OutputLevel {
        return Err(invalid(format!(
            "pipelined execution requires the output-level policy, got {}",
            spec.policy.level
        ))
        .into());
    }
    options.cost.check()?;
    let steps = schedule.steps();
    let plans: Vec<StagePlan> = stage_plans(spec.blocks, steps, options.plan)?;
    let programs = worker_programs(&plans, options.workers)?;
    let noise = initial_noise(world, spec.blocks, spec.seed);

    let mut messages = Vec::new();
    let mut trace = Vec::new();
    let mut cells = Vec::new();
    let mut failure = None;
    thread::scope(|scope| {
        let (events_tx, events_rx) = channel::<Event>();
        let mut inbox: Option<Receiver<Handoff>> = None;
        let count = programs.len();
        for (w, program) in programs.into_iter().enumerate() {
            let (outbox, next_inbox) = if w + 1 < count {
                let (tx, rx) = channel();
                (Some(tx), Some(rx))
            } else {
                (None, None)
            };
            let worker = Worker {
                program,
                denoiser,
                schedule,
                noise: &noise,
                window: spec.window,
                cost: options.cost,
                jitter: options.jitter,
                inbox: inbox.take(),
                outbox,
                events: events_tx.clone(),
            };
            inbox = next_inbox;
            scope.spawn(move || worker.run());
        }
        drop(events_tx);
        for event in events_rx {
            match event {
                Event::Cell(n, j, b) => cells.push((n, j, b)),
                Event::Trace(r) => trace.push(r),
                Event::Message(m) => messages.push(m),
                Event::Failed(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
    });
    sort_trace(&mut trace);
    sort_messages(&mut messages);
    if let Some(error) = failure {
        return Err(PipelineAbort {
            error,
            messages,
            trace,
        });
    }
    let assemble = || -> Result<GenerationGrid> {
        let mut grid = GenerationGrid::new(spec.blocks, schedule.times());
        for b in &noise {
            grid.set(b.index, 0, b.clone())?;
        }
        cells.sort_by_key(|(n, j, _)| (*j, *n));
        for (n, j, b) in cells {
            grid.set(n, j, b)?;
        }
        if !grid.is_complete() {
            return Err(Error::Invariant(
                "pipeline finished with missing cells".into(),
            ));
        }
        Ok(grid)
    };
    let grid = match assemble() {
        Ok(g) => g,
        Err(error) => {
            return Err(PipelineAbort {
                error,
                messages,
                trace,
            })
        }
    };
    let makespan = trace.iter().map(|r| r.end).fold(0.0, f64::max);
    Ok(PipelineRun {
        grid,
        makespan,
        pass_counts: plans.iter().map(StagePlan::len).collect(),
        messages,
        trace,
        workers: options.workers,
    })
}
