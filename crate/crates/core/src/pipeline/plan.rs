use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// What one evaluator call does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassKind {
    /// Denoise one block (the ideal plan also folds its cache write in here).
    Denoise,
    /// Commit one block's output as context.
    CacheWrite,
    /// Commit block `m` and denoise block `m + 1` in one call.
    Fused,
    /// Pass counted by the stated fused total but not attributed to any work.
    Unattributed,
}

impl PassKind {
    pub fn name(self) -> &'static str {
        match self {
            PassKind::Denoise => "denoise",
            PassKind::CacheWrite => "cache-write",
            PassKind::Fused => "fused",
            PassKind::Unattributed => "unattributed",
        }
    }
}

impl fmt::Display for PassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Elementary work inside a pass, executed in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PassOp {
    Denoise(usize),
    Write(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pass {
    pub kind: PassKind,
    pub ops: Vec<PassOp>,
}

impl Pass {
    fn new(kind: PassKind, ops: Vec<PassOp>) -> Self {
        Self { kind, ops }
    }

    /// Block denoised by this pass, if any.
    pub fn denoised(&self) -> Option<usize> {
        self.ops.iter().find_map(|op| match op {
            PassOp::Denoise(n) => Some(*n),
            PassOp::Write(_) => None,
        })
    }

    /// Block the trace attributes the pass to: the denoised block, else the written one.
    pub fn block(&self) -> Option<usize> {
        self.denoised().or_else(|| {
            self.ops.iter().find_map(|op| match op {
                PassOp::Write(n) => Some(*n),
                PassOp::Denoise(_) => None,
            })
        })
    }
}

/// How the fused total is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusedCount {
    /// `N + 2` per stage: the itemised passes plus one unattributed pass.
    #[default]
    Stated,
    /// `N + 1` per stage: the itemised passes only.
    Itemised,
}

/// Pass layout within a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "plan", content = "count")]
pub enum PlanKind {
    /// One pass per block; cache writes are free.
    Ideal,
    /// Separate denoise and cache-write passes, `2N` per stage.
    Naive,
    /// Cache write of `m` fused with denoise of `m + 1`.
    Fused(FusedCount),
}

impl PlanKind {
    pub fn name(self) -> &'static str {
        match self {
            PlanKind::Ideal => "ideal",
            PlanKind::Naive => "naive",
            PlanKind::Fused(FusedCount::Stated) => "fused",
            PlanKind::Fused(FusedCount::Itemised) => "fused-itemised",
        }
    }
}

impl fmt::Display for PlanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(PlanKind::Ideal),
            "naive" => Ok(PlanKind::Naive),
            "fused" => Ok(PlanKind::Fused(FusedCount::Stated)),
            "fused-itemised" => Ok(PlanKind::Fused(FusedCount::Itemised)),
            other => Err(invalid(format!("unknown pass plan `{other}`"))),
        }
    }
}

/// Ordered passes one stage runs over blocks `0..N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: usize,
    pub blocks: usize,
    pub passes: Vec<Pass>,
}

impl StagePlan {
    pub fn new(stage: usize, blocks: usize, kind: PlanKind) -> Result<Self> {
        if blocks == 0 {
            return Err(invalid("a stage plan needs at least one block"));
        }
        let n = blocks;
        let mut passes = Vec::new();
        match kind {
            PlanKind::Ideal => {
                for b in 0..n {
                    passes.push(Pass::new(
                        PassKind::Denoise,
                        vec![PassOp::Denoise(b), PassOp::Write(b)],
                    ));
                }
            }
            PlanKind::Naive => {
                for b in 0..n {
                    passes.push(Pass::new(PassKind::Denoise, vec![PassOp::Denoise(b)]));
                    passes.push(Pass::new(PassKind::CacheWrite, vec![PassOp::Write(b)]));
                }
            }
            PlanKind::Fused(count) => {
                passes.push(Pass::new(PassKind::Denoise, vec![PassOp::Denoise(0)]));
                for m in 0..n - 1 {
                    passes.push(Pass::new(
                        PassKind::Fused,
                        vec![PassOp::Write(m), PassOp::Denoise(m + 1)],
                    ));
                }
                passes.push(Pass::new(PassKind::CacheWrite, vec![PassOp::Write(n - 1)]));
                if count == FusedCount::Stated {
                    passes.push(Pass::new(PassKind::Unattributed, Vec::new()));
                }
            }
        }
        let plan = Self {
            stage,
            blocks,
            passes,
        };
        plan.check()?;
        Ok(plan)
    }

    /// Every block is denoised once and written once, after its denoise and
    /// before the next block's denoise.
    pub fn check(&self) -> Result<()> {
        let mut denoised = 0usize;
        let mut written = 0usize;
        for op in self.passes.iter().flat_map(|p| &p.ops) {
            match *op {
                PassOp::Denoise(n) => {
                    if n != denoised || written != n {
                        return Err(Error::Invariant(format!(
                            "stage {} denoises block {n} out of order",
                            self.stage
                        )));
                    }
                    denoised += 1;
                }
                PassOp::Write(n) => {
                    if n != written || n >= denoised {
                        return Err(Error::Invariant(format!(
                            "stage {} writes block {n} out of order",
                            self.stage
                        )));
                    }
                    written += 1;
                }
            }
        }
        if denoised != self.blocks || written != self.blocks {
            return Err(Error::Invariant(format!(
                "stage {} denoises {denoised} and writes {written} of {} blocks",
                self.stage, self.blocks
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.passes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passes.is_empty()
    }

    /// Splits the passes into one segment per block, each ending with the pass
    /// that denoises that block, plus the trailing passes.
    pub fn segments(&self) -> (Vec<Vec<Pass>>, Vec<Pass>) {
        let mut segments = Vec::with_capacity(self.blocks);
        let mut current = Vec::new();
        for pass in &self.passes {
            let ends = pass.denoised().is_some();
            current.push(pass.clone());
            if ends {
                segments.push(std::mem::take(&mut current));
            }
        }
        (segments, current)
    }
}

/// Composition of a per-stage pass count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassDecomposition {
    pub standalone_denoise: usize,
    pub fused: usize,
    pub cache_write: usize,
    pub unattributed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCount {
    /// Passes per stage under the counting convention.
    pub total: usize,
    pub decomposition: PassDecomposition,
    /// Sum of the attributed passes; differs from `total` only for the stated fused count.
    pub itemised: usize,
}

/// Per-stage pass count for `blocks` blocks: `2N` naive, `N + 2` fused.
pub fn count_passes(blocks: usize, fused: bool) -> Result<PassCount> {
    let kind = if fused {
        PlanKind::Fused(FusedCount::Stated)
    } else {
        PlanKind::Naive
    };
    count_plan(blocks, kind)
}

pub fn count_plan(blocks: usize, kind: PlanKind) -> Result<PassCount> {
    let plan = StagePlan::new(0, blocks, kind)?;
    let mut d = PassDecomposition {
        standalone_denoise: 0,
        fused: 0,
        cache_write: 0,
        unattributed: 0,
    };
    for p in &plan.passes {
        match p.kind {
            PassKind::Denoise => d.standalone_denoise += 1,
            PassKind::Fused => d.fused += 1,
            PassKind::CacheWrite => d.cache_write += 1,
            PassKind::Unattributed => d.unattributed += 1,
        }
    }
    Ok(PassCount {
        total: plan.len(),
        decomposition: d,
        itemised: d.standalone_denoise + d.fused + d.cache_write,
    })
}

/// Cells `(n, j)` grouped by anti-diagonal `n + j`, both 0-based.
///
/// Wave `w` holds every cell with `n + j = w`, in increasing `n`.
pub fn antidiagonal_schedule(blocks: usize, steps: usize) -> Result<Vec<Vec<(usize, usize)>>> {
    if blocks == 0 || steps == 0 {
        return Err(invalid("anti-diagonal schedule needs N >= 1 and S >= 1"));
    }
    Ok((0..blocks + steps - 1)
        .map(|w| {
            let lo = w.saturating_sub(steps - 1);
            let hi = w.min(blocks - 1);
            (lo..=hi).map(|n| (n, w - n)).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn stated_counts() {
        assert_eq!(count_passes(8, false).unwrap().total, 16);
        let fused = count_passes(8, true).unwrap();
        assert_eq!(fused.total, 10);
        assert_eq!(fused.itemised, 9);
        assert_eq!(
            fused.decomposition,
            PassDecomposition {
                standalone_denoise: 1,
                fused: 7,
                cache_write: 1,
                unattributed: 1
            }
        );
        let one = count_passes(1, true).unwrap();
        assert_eq!(one.decomposition.fused, 0);
        assert_eq!(one.itemised, 2);
        assert_eq!(count_passes(1, false).unwrap().total, 2);
        assert_eq!(
            count_plan(8, PlanKind::Fused(FusedCount::Itemised))
                .unwrap()
                .total,
            9
        );
        assert_eq!(count_plan(8, PlanKind::Ideal).unwrap().total, 8);
    }

    #[test]
    fn wave_examples() {
        assert_eq!(antidiagonal_schedule(5, 4).unwrap().len(), 8);
        let single_block = antidiagonal_schedule(1, 4).unwrap();
        assert!(single_block.iter().all(|w| w.len() == 1));
        assert_eq!(single_block.len(), 4);
        let single_stage = antidiagonal_schedule(6, 1).unwrap();
        assert_eq!(single_stage.len(), 6);
        assert!(single_stage.iter().all(|w| w.len() == 1));
        assert!(antidiagonal_schedule(0, 3).is_err());
    }

    #[test]
    fn segments_end_on_denoise() {
        let plan = StagePlan::new(2, 3, PlanKind::Naive).unwrap();
        let (segs, tail) = plan.segments();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[0].len(), 1);
        assert_eq!(segs[1].len(), 2);
        assert_eq!(tail.len(), 1);
        assert_eq!(tail[0].kind, PassKind::CacheWrite);
    }

    #[test]
    fn malformed_plan_is_rejected() {
        let mut plan = StagePlan::new(0, 2, PlanKind::Naive).unwrap();
        plan.passes.swap(1, 2);
        assert!(plan.check().is_err());
    }

    #[test]
    fn plan_names_round_trip() {
        for kind in [
            PlanKind::Ideal,
            PlanKind::Naive,
            PlanKind::Fused(FusedCount::Stated),
            PlanKind::Fused(FusedCount::Itemised),
        ] {
            assert_eq!(kind.name().parse::<PlanKind>().unwrap(), kind);
        }
    }

    proptest! {
        #[test]
        fn waves_cover_grid_once(n in 1usize..20, s in 1usize..8) {
            let waves = antidiagonal_schedule(n, s).unwrap();
            prop_assert_eq!(waves.len(), n + s - 1);
            let mut seen = HashSet::new();
            for (w, cells) in waves.iter().enumerate() {
                for &(b, j) in cells {
                    prop_assert_eq!(b + j, w);
                    prop_assert!(seen.insert((b, j)));
                }
                // Dependencies (b-1, j) and (b, j-1) never share a wave with (b, j).
                for &(b, j) in cells {
                    if b > 0 { prop_assert!(!cells.contains(&(b - 1, j))); }
                    if j > 0 { prop_assert!(!cells.contains(&(b, j - 1))); }
                }
            }
            prop_assert_eq!(seen.len(), n * s);
        }

        #[test]
        fn plans_conserve_work(n in 1usize..30) {
            for kind in [PlanKind::Naive, PlanKind::Fused(FusedCount::Stated), PlanKind::Ideal] {
                let plan = StagePlan::new(0, n, kind).unwrap();
                let ops: Vec<PassOp> = plan.passes.iter().flat_map(|p| p.ops.clone()).collect();
                let denoise = ops.iter().filter(|o| matches!(o, PassOp::Denoise(_))).count();
                let write = ops.iter().filter(|o| matches!(o, PassOp::Write(_))).count();
                prop_assert_eq!((denoise, write), (n, n));
            }
            prop_assert_eq!(count_passes(n, false).unwrap().total, 2 * n);
            let f = count_passes(n, true).unwrap();
            prop_assert_eq!(f.total, n + 2);
            prop_assert_eq!(f.itemised, n + 1);
        }
    }
}
