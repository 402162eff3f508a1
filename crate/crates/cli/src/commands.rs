use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};

use hierdiff::analysis::{drift_score, drift_under_bias, propagation_curve, DriftReport};
use hierdiff::fkl::{
    dynamics_correlation_study, fkl_loss, mode_study, sample_teacher_trajectory,
    shrinkage_students, MixtureToy, ModeStudy, Objective, SamplingMode,
};
use hierdiff::generate::{generate, generate_hierarchical, ContextLevel, GenerationGrid, RunSpec};
use hierdiff::model::OracleDenoiser;
use hierdiff::pipeline::{
    count_plan, run_pipelined, FusedCount, PipelineOptions, PipelineRun, PlanKind,
};
use hierdiff::report::{fmt_num, write_atomic, CsvTable};

use crate::config::{ConfigError, Resolved};

/// A consistency check failed while running an experiment.
#[derive(Debug)]
pub struct InvariantViolation(pub String);

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invariant violated: {}", self.0)
    }
}

impl std::error::Error for InvariantViolation {}

fn oracle(r: &Resolved) -> OracleDenoiser {
    OracleDenoiser::new(r.world.clone(), r.schedule.shift())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    write_atomic(&path, contents.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn prepare(r: &Resolved) -> Result<&Path> {
    let dir = r.config.out.as_path();
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(dir, "resolved-config.json", &r.echo())?;
    Ok(dir)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn drift_rows(table: &mut CsvTable, lead: &[String], report: &DriftReport) -> Result<()> {
    for m in &report.metrics {
        for (i, v) in m.values.iter().enumerate() {
            let mut row = lead.to_vec();
            row.extend([
                m.metric.name().to_string(),
                (i + 1).to_string(),
                fmt_num(*v),
                fmt_num(m.slope),
                fmt_num(m.normalised_slope),
                fmt_num(m.weight),
                fmt_num(report.aggregate),
            ]);
            table.push(row)?;
        }
    }
    Ok(())
}

const DRIFT_COLUMNS: [&str; 7] = [
    "metric",
    "segment",
    "value",
    "slope",
    "normalised_slope",
    "weight",
    "aggregate",
];

/// Generates one grid per seed under the configured policy and scores its drift.
pub fn generate_cmd(r: &Resolved) -> Result<String> {
    let dir = prepare(r)?;
    let oracle = oracle(r);
    let mut drift = CsvTable::new(["seed"].into_iter().chain(DRIFT_COLUMNS));
    let mut aggregates = Vec::new();
    for &seed in &r.config.seeds {
        let spec = RunSpec::new(r.config.policy, r.blocks, seed);
        let grid = generate(&oracle, &r.world, &r.schedule, &spec)?;
        let mut json = grid.to_json()?;
        json.push('\n');
        write(dir, &format!("grid-seed{seed}.json"), &json)?;
        let report = drift_score(&grid.final_frames()?, &r.config.drift)?;
        aggregates.push(report.aggregate);
        drift_rows(&mut drift, &[seed.to_string()], &report)?;
    }
    write(dir, "drift.csv", &drift.to_csv()?)?;
    Ok(format!(
        "generate: policy {}, {} seeds, mean drift {}\n",
        r.config.policy,
        r.config.seeds.len(),
        fmt_num(mean(aggregates))
    ))
}

/// Drift of the configured policy when every block's velocity carries the bias.
pub fn drift_cmd(r: &Resolved) -> Result<String> {
    let dir = prepare(r)?;
    let world = r.world.clone();
    let rows = drift_under_bias(
        &oracle(r),
        &world,
        &r.schedule,
        &[r.config.policy],
        r.config.bias,
        &r.config.seeds,
        &r.config.drift,
    )?;
    let mut table = CsvTable::new(["policy", "seed"].into_iter().chain(DRIFT_COLUMNS));
    for row in &rows {
        drift_rows(
            &mut table,
            &[row.policy.to_string(), row.seed.to_string()],
            &row.report,
        )?;
    }
    write(dir, "drift.csv", &table.to_csv()?)?;
    Ok(format!(
        "drift: policy {}, bias {}, mean aggregate {}\n",
        r.config.policy,
        fmt_num(r.config.bias),
        fmt_num(mean(rows.iter().map(|x| x.report.aggregate)))
    ))
}

/// Context-level ablation: bias propagation and drift for each policy on shared seeds.
pub fn ablate_tc_cmd(r: &Resolved) -> Result<String> {
    let dir = prepare(r)?;
    let oracle = oracle(r);
    let world = r.world.clone();
    let seeds = &r.config.seeds;
    let prop = propagation_curve(
        &oracle,
        &world,
        &r.schedule,
        &ContextLevel::ALL,
        r.config.delta,
        seeds,
    )?;
    let drift = drift_under_bias(
        &oracle,
        &world,
        &r.schedule,
        &ContextLevel::ALL,
        r.config.bias,
        seeds,
        &r.config.drift,
    )?;
    let mut table = CsvTable::new([
        "policy",
        "order",
        "seeds",
        "delta",
        "bias",
        "downstream",
        "final_block",
        "drift",
    ]);
    let mut summary = String::from("ablate-tc:\n");
    for policy in ContextLevel::ALL {
        let p: Vec<_> = prop.iter().filter(|x| x.policy == policy).collect();
        let d = mean(
            drift
                .iter()
                .filter(|x| x.policy == policy)
                .map(|x| x.report.aggregate),
        );
        let downstream = mean(p.iter().map(|x| x.downstream));
        let order = if policy == ContextLevel::CleanZero {
            "block-first"
        } else {
            "hierarchical"
        };
        table.push(vec![
            policy.to_string(),
            order.into(),
            seeds.len().to_string(),
            fmt_num(r.config.delta),
            fmt_num(r.config.bias),
            fmt_num(downstream),
            fmt_num(mean(p.iter().map(|x| x.final_block))),
            fmt_num(d),
        ])?;
        summary.push_str(&format!(
            "  {policy:<13} downstream {} drift {}\n",
            fmt_num(downstream),
            fmt_num(d)
        ));
    }
    write(dir, "ablate-tc.csv", &table.to_csv()?)?;
    Ok(summary)
}

const PLANS: [PlanKind; 4] = [
    PlanKind::Ideal,
    PlanKind::Naive,
    PlanKind::Fused(FusedCount::Stated),
    PlanKind::Fused(FusedCount::Itemised),
];

fn grid_diff(expected: &GenerationGrid, got: &GenerationGrid) -> String {
    let mut lines = Vec::new();
    for n in 0..expected.blocks() {
        for j in 0..=expected.steps() {
            let (a, b) = (expected.get(n, j), got.get(n, j));
            if a == b {
                continue;
            }
            let detail = match (a, b) {
                (Some(a), Some(b)) => {
                    let d = a
                        .values
                        .iter()
                        .zip(&b.values)
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max);
                    format!("max abs diff {d:e}")
                }
                (Some(_), None) => "missing in pipelined grid".into(),
                _ => "unexpected cell".into(),
            };
            lines.push(format!("  cell ({n}, {j}): {detail}"));
        }
    }
    let total = lines.len();
    lines.truncate(10);
    if total > 10 {
        lines.push(format!("  ... {} more", total - 10));
    }
    lines.join("\n")
}

fn pipelined(
    r: &Resolved,
    oracle: &OracleDenoiser,
    spec: &RunSpec,
    plan: PlanKind,
    workers: usize,
) -> Result<PipelineRun> {
    let options = PipelineOptions {
        plan,
        workers,
        cost: r.cost,
        jitter: None,
    };
    Ok(run_pipelined(
        oracle,
        &r.world,
        &r.schedule,
        spec,
        &options,
    )?)
}

/// Pass accounting and makespan of the pipelined executor against sequential sweeps.
pub fn pipeline_bench_cmd(r: &Resolved) -> Result<String> {
    if r.config.policy != ContextLevel::OutputLevel {
        return Err(ConfigError(format!(
            "pipeline-bench runs the output-level policy only, got {}",
            r.config.policy
        ))
        .into());
    }
    let dir = prepare(r)?;
    let oracle = oracle(r);
    let steps = r.schedule.steps();
    let mut table = CsvTable::new([
        "plan",
        "blocks",
        "steps",
        "workers",
        "passes_per_stage",
        "standalone_denoise",
        "fused",
        "cache_write",
        "unattributed",
        "sequential_makespan",
        "pipelined_makespan",
        "speedup",
    ]);
    let mut summary = String::from("pipeline-bench:\n");
    for plan in PLANS {
        let mut timing = None;
        for &seed in &r.config.seeds {
            let spec = RunSpec::new(ContextLevel::OutputLevel, r.blocks, seed);
            let expected = generate_hierarchical(&oracle, &r.world, &r.schedule, &spec)?;
            let single = pipelined(r, &oracle, &spec, plan, 1)?;
            let multi = pipelined(r, &oracle, &spec, plan, r.workers)?;
            for (run, w) in [(&single, 1), (&multi, r.workers)] {
                if !run.grid.same_cells(&expected) {
                    return Err(InvariantViolation(format!(
                        "plan {plan} with {w} workers, seed {seed}: pipelined grid differs from the sequential sweep\n{}",
                        grid_diff(&expected, &run.grid)
                    ))
                    .into());
                }
            }
            timing.get_or_insert((single, multi));
        }
        let (single, multi) = timing.expect("at least one seed");
        let count = count_plan(r.blocks, plan)?;
        if multi.pass_counts.iter().any(|&c| c != count.total) {
            return Err(InvariantViolation(format!(
                "plan {plan}: executed pass counts {:?} differ from the plan's {}",
                multi.pass_counts, count.total
            ))
            .into());
        }
        let speedup = single.makespan / multi.makespan;
        let d = count.decomposition;
        table.push(vec![
            plan.to_string(),
            r.blocks.to_string(),
            steps.to_string(),
            r.workers.to_string(),
            count.total.to_string(),
            d.standalone_denoise.to_string(),
            d.fused.to_string(),
            d.cache_write.to_string(),
            d.unattributed.to_string(),
            fmt_num(single.makespan),
            fmt_num(multi.makespan),
            fmt_num(speedup),
        ])?;
        let mut trace = CsvTable::new([
            "tick",
            "end",
            "worker",
            "stage",
            "pass_index",
            "block",
            "pass_kind",
            "wave",
        ]);
        for t in &multi.trace {
            trace.push(vec![
                fmt_num(t.tick),
                fmt_num(t.end),
                t.worker.to_string(),
                t.stage.to_string(),
                t.pass_index.to_string(),
                t.block.map(|b| b.to_string()).unwrap_or_default(),
                t.pass_kind.name().into(),
                t.wave.map(|w| w.to_string()).unwrap_or_default(),
            ])?;
        }
        write(dir, &format!("trace-{plan}.csv"), &trace.to_csv()?)?;
        summary.push_str(&format!(
            "  {:<15} {:>3} passes/stage, makespan {} -> {}, speedup {}\n",
            plan.name(),
            count.total,
            fmt_num(single.makespan),
            fmt_num(multi.makespan),
            fmt_num(speedup)
        ));
    }
    write(dir, "pipeline-bench.csv", &table.to_csv()?)?;
    Ok(summary)
}

fn optima_rows(table: &mut CsvTable, study: &ModeStudy) -> Result<()> {
    for (rank, o) in study.optima.iter().enumerate() {
        table.push(vec![
            study.objective.name().into(),
            fmt_num(study.separation),
            rank.to_string(),
            fmt_num(o.m),
            fmt_num(o.v),
            fmt_num(o.value),
        ])?;
    }
    Ok(())
}

/// Mode-seeking study on the two-mode toy and the dynamics correlation of shrinkage students.
pub fn fkl_study_cmd(r: &Resolved) -> Result<String> {
    let dir = prepare(r)?;
    let f = &r.config.fkl;
    let toy = MixtureToy::new(f.separation)?;
    let studies = [
        Objective::ReverseKl,
        Objective::ForwardKl,
        Objective::Combined(f.lambda),
    ]
    .into_iter()
    .map(|o| mode_study(&toy, o, &f.grid))
    .collect::<hierdiff::Result<Vec<_>>>()?;
    let mut optima = CsvTable::new(["objective", "separation", "rank", "m", "v", "value"]);
    for s in &studies {
        optima_rows(&mut optima, s)?;
    }
    write(dir, "mode-optima.csv", &optima.to_csv()?)?;
    let mut landscape = CsvTable::new(["m", "v", "reverse_kl", "forward_kl", "combined"]);
    for p in &studies[2].landscape {
        landscape.push(vec![
            fmt_num(p.m),
            fmt_num(p.v),
            fmt_num(p.reverse_kl),
            fmt_num(p.forward_kl),
            fmt_num(p.combined),
        ])?;
    }
    write(dir, "mode-landscape.csv", &landscape.to_csv()?)?;

    let oracle = oracle(r);
    let students = shrinkage_students(&oracle, &f.shrink_factors)?;
    let study = dynamics_correlation_study(&students, &r.world, &r.schedule, &r.config.seeds)?;
    let teachers = r
        .config
        .seeds
        .iter()
        .map(|&seed| {
            sample_teacher_trajectory(
                &r.world,
                &r.schedule,
                f.dense_steps,
                SamplingMode::Bidirectional,
                seed,
            )
        })
        .collect::<hierdiff::Result<Vec<_>>>()?;
    let mut corr = CsvTable::new(["student", "factor", "bidirectional", "causal", "fkl_loss"]);
    for ((dynamics, (_, student)), &factor) in
        study.students.iter().zip(&students).zip(&f.shrink_factors)
    {
        let losses = teachers
            .iter()
            .map(|t| fkl_loss(student, t, &r.schedule, f.k))
            .collect::<hierdiff::Result<Vec<_>>>()?;
        corr.push(vec![
            dynamics.label.clone(),
            fmt_num(factor),
            fmt_num(dynamics.bidirectional),
            fmt_num(dynamics.causal),
            fmt_num(mean(losses)),
        ])?;
    }
    write(dir, "correlation.csv", &corr.to_csv()?)?;
    let mut summary = CsvTable::new(["students", "seeds", "pearson"]);
    summary.push(vec![
        study.students.len().to_string(),
        r.config.seeds.len().to_string(),
        fmt_num(study.pearson),
    ])?;
    write(dir, "correlation-summary.csv", &summary.to_csv()?)?;

    let mut out = String::from("fkl-study:\n");
    for s in &studies {
        out.push_str(&format!(
            "  {:<11} {} optima:",
            s.objective.name(),
            s.optima.len()
        ));
        for o in &s.optima {
            out.push_str(&format!(" (m {}, v {})", fmt_num(o.m), fmt_num(o.v)));
        }
        out.push('\n');
    }
    out.push_str(&format!("  dynamics pearson {}\n", fmt_num(study.pearson)));
    Ok(out)
}
