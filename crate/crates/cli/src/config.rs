//! Experiment configuration: JSON on disk, overridden by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hierdiff::analysis::DriftConfig;
use hierdiff::fkl::StudyGrid;
use hierdiff::generate::ContextLevel;
use hierdiff::model::GaussianWorld;
use hierdiff::pipeline::CostModel;
use hierdiff::schedule::{make_schedule, NoiseSchedule, DEFAULT_INTERIOR, DEFAULT_SHIFT};

/// Bad configuration: unreadable file, malformed JSON or an invalid value.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub blocks: usize,
    pub frames_per_block: usize,
    pub dim: usize,
    pub rho: f64,
    pub variance: f64,
    pub mean: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            blocks: 8,
            frames_per_block: 3,
            dim: 4,
            rho: 0.9,
            variance: 1.0,
            mean: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub shift: f64,
    /// Step times strictly between 1 and 0, decreasing.
    pub interior: Vec<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            shift: DEFAULT_SHIFT,
            interior: DEFAULT_INTERIOR.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub pass_cost: f64,
    pub comm_latency: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            pass_cost: 1.0,
            comm_latency: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FklConfig {
    /// Constrained student steps per loss evaluation.
    pub k: usize,
    pub lambda: f64,
    pub dense_steps: usize,
    /// Half-distance between the two mixture modes.
    pub separation: f64,
    pub shrink_factors: Vec<f64>,
    pub grid: StudyGrid,
}

impl Default for FklConfig {
    fn default() -> Self {
        Self {
            k: hierdiff::fkl::DEFAULT_CONSTRAINED_STEPS,
            lambda: hierdiff::fkl::DEFAULT_LAMBDA,
            dense_steps: 50,
            separation: 3.0,
            shrink_factors: (1..=10).rev().map(|i| i as f64 / 10.0).collect(),
            grid: StudyGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub schedule: ScheduleConfig,
    pub policy: ContextLevel,
    /// Blocks to generate; defaults to every block of the world.
    pub blocks: Option<usize>,
    /// Pipeline worker threads; defaults to one per denoising step.
    pub workers: Option<usize>,
    pub seeds: Vec<u64>,
    pub cost: CostConfig,
    pub drift: DriftConfig,
    /// Velocity bias on every block for drift measurements.
    pub bias: f64,
    /// Velocity bias on block 0 for propagation measurements.
    pub delta: f64,
    pub fkl: FklConfig,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            schedule: ScheduleConfig::default(),
            policy: ContextLevel::OutputLevel,
            blocks: None,
            workers: None,
            seeds: (0..20).collect(),
            cost: CostConfig::default(),
            drift: DriftConfig::default(),
            bias: 1.0,
            delta: 0.1,
            fkl: FklConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub policy: Option<String>,
    pub workers: Option<usize>,
}

/// A validated configuration with its derived objects.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub world: GaussianWorld,
    pub schedule: NoiseSchedule,
    pub blocks: usize,
    pub workers: usize,
    pub cost: CostModel,
}

impl Resolved {
    pub fn echo(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.config).expect("config serialises");
        s.push('\n');
        s
    }
}

/// 1-based line of the first `"key"` in `text`, for pointing at a bad value.
fn locate(text: &str, key: &str) -> Option<usize> {
    let at = text.find(&format!("\"{key}\""))?;
    Some(text[..at].matches('\n').count() + 1)
}

struct Checker<'a> {
    text: &'a str,
}

impl Checker<'_> {
    fn fail(&self, path: &str, msg: impl fmt::Display) -> ConfigError {
        let key = path.rsplit('.').next().unwrap_or(path);
        match locate(self.text, key) {
            Some(line) => ConfigError(format!("line {line}: `{path}`: {msg}")),
            None => ConfigError(format!("`{path}`: {msg}")),
        }
    }
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Resolved, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let config = if text.trim().is_empty() {
        ExperimentConfig::default()
    } else {
        parse(&text)?
    };
    resolve(config, &text, overrides)
}

pub fn resolve(
    mut config: ExperimentConfig,
    text: &str,
    overrides: &Overrides,
) -> Result<Resolved, ConfigError> {
    if let Some(seed) = overrides.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &overrides.out {
        config.out = out.clone();
    }
    if let Some(policy) = &overrides.policy {
        config.policy = policy
            .parse()
            .map_err(|e: hierdiff::Error| ConfigError(format!("--policy: {e}")))?;
    }
    if let Some(w) = overrides.workers {
        config.workers = Some(w);
    }

    let c = Checker { text };
    let w = &config.world;
    let world = GaussianWorld::new(
        w.blocks,
        w.frames_per_block,
        w.dim,
        w.rho,
        w.variance,
        w.mean,
    )
    .map_err(|e| c.fail("world", e))?;
    let schedule = make_schedule(config.schedule.shift, &config.schedule.interior)
        .map_err(|e| c.fail("schedule", e))?;
    let blocks = config.blocks.unwrap_or(world.blocks());
    if blocks == 0 || blocks > world.blocks() {
        return Err(c.fail(
            "blocks",
            format!("must be in 1..={}, got {blocks}", world.blocks()),
        ));
    }
    let steps = schedule.steps();
    let workers = config.workers.unwrap_or(steps);
    if workers == 0 || workers > steps {
        return Err(c.fail("workers", format!("must be in 1..={steps}, got {workers}")));
    }
    if config.seeds.is_empty() {
        return Err(c.fail("seeds", "at least one seed is required"));
    }
    let cost = CostModel {
        pass_cost: config.cost.pass_cost,
        comm_latency: config.cost.comm_latency,
    };
    cost.check().map_err(|e| c.fail("cost", e))?;
    config.drift.check().map_err(|e| c.fail("drift", e))?;
    for (name, value) in [("bias", config.bias), ("delta", config.delta)] {
        if !value.is_finite() {
            return Err(c.fail(name, "must be finite"));
        }
    }
    let f = &config.fkl;
    if f.k == 0 || f.k > steps {
        return Err(c.fail("fkl.k", format!("must be in 1..={steps}, got {}", f.k)));
    }
    if !(f.lambda >= 0.0 && f.lambda.is_finite()) {
        return Err(c.fail("fkl.lambda", "must be non-negative"));
    }
    if f.dense_steps < steps {
        return Err(c.fail("fkl.dense_steps", format!("must be at least {steps}")));
    }
    if !(f.separation >= 0.0 && f.separation.is_finite()) {
        return Err(c.fail("fkl.separation", "must be non-negative"));
    }
    if f.shrink_factors.len() < 3 || f.shrink_factors.iter().any(|x| !x.is_finite()) {
        return Err(c.fail("fkl.shrink_factors", "need at least 3 finite factors"));
    }

    config.blocks = Some(blocks);
    config.workers = Some(workers);
    Ok(Resolved {
        config,
        world,
        schedule,
        blocks,
        workers,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let r = resolve(ExperimentConfig::default(), "", &Overrides::default()).unwrap();
        assert_eq!(r.blocks, 8);
        assert_eq!(r.workers, 4);
        assert_eq!(r.config.seeds.len(), 20);
        assert_eq!(r.config.policy, ContextLevel::OutputLevel);
    }

    #[test]
    fn flags_beat_config() {
        let text = r#"{"seeds": [1, 2], "policy": "input-level", "workers": 2}"#;
        let o = Overrides {
            seed: Some(9),
            policy: Some("clean-zero".into()),
            workers: Some(3),
            out: None,
        };
        let r = resolve(parse(text).unwrap(), text, &o).unwrap();
        assert_eq!(r.config.seeds, vec![9]);
        assert_eq!(r.config.policy, ContextLevel::CleanZero);
        assert_eq!(r.workers, 3);
        let r = resolve(parse(text).unwrap(), text, &Overrides::default()).unwrap();
        assert_eq!(r.config.seeds, vec![1, 2]);
        assert_eq!(r.workers, 2);
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let err = parse("{\n  \"world\": {\"blocks\": 2, \"colour\": 1}\n}").unwrap_err();
        assert!(
            err.0.contains("colour") && err.0.contains("line 2"),
            "{}",
            err.0
        );
        assert!(parse(r#"{"fkl": {"grid": {"points": 3}}}"#).is_err());
    }

    #[test]
    fn invalid_values_point_at_their_line() {
        let text = "{\n  \"seeds\": [1],\n  \"workers\": 9\n}";
        let err = resolve(parse(text).unwrap(), text, &Overrides::default()).unwrap_err();
        assert!(err.0.starts_with("line 3: `workers`"), "{}", err.0);
        let text = "{\n\"fkl\": {\n  \"k\": 0\n}}";
        let err = resolve(parse(text).unwrap(), text, &Overrides::default()).unwrap_err();
        assert!(err.0.starts_with("line 3: `fkl.k`"), "{}", err.0);
    }

    #[test]
    fn bad_policy_flag_is_a_config_error() {
        let o = Overrides {
            policy: Some("sideways".into()),
            ..Overrides::default()
        };
        assert!(resolve(ExperimentConfig::default(), "", &o)
            .unwrap_err()
            .0
            .contains("sideways"));
    }

    #[test]
    fn echo_round_trips() {
        let r = resolve(ExperimentConfig::default(), "", &Overrides::default()).unwrap();
        let back = parse(&r.echo()).unwrap();
        assert_eq!(back, r.config);
    }
}
