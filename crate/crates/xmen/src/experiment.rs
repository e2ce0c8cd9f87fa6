//! End-to-end experiment orchestration: named benchmark presets,
//! declarative run configuration, and the gen-demos → train → generate
//! → evaluate pipeline with machine-readable artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    masked_maxent_train, masked_mdp, maxent_train, policy_rollouts, reirl_train, uniform_policy,
    BaselineConfig,
};
use crate::constraints::{bind_constraints, ConstraintSet, ConstraintSpec};
use crate::encoding::encode;
use crate::error::{Error, Result};
use crate::eval::{
    occupancy, path_kl, valid_fraction, write_metrics_csv, write_occupancy_csv, MetricsRow,
};
use crate::exact::{self, exact_sample, gen_demos, upper_path_classifier, DEFAULT_ENUM_CAP};
use crate::learner::{train, TrainConfig};
use crate::mdp::{GridWorld, GridWorldSpec, ModelParams, Trajectory, TrajectoryRecord};
use crate::oracle::{OracleStats, SolverConfig};
use crate::sampler::{mix64, SamplerConfig, SamplerContext};

/// A fully specified benchmark: environment, constraints, and horizon.
pub struct Preset {
    pub name: &'static str,
    pub grid: GridWorld,
    pub constraint_specs: Vec<ConstraintSpec>,
    pub cset: ConstraintSet,
    pub horizon: usize,
    /// Demonstration class mixture (upper, lower).
    pub demo_mix: (f64, f64),
}

/// The 9×9 symbol benchmark: three actions (up, right, diagonal),
/// distance + per-cell features, and four symbol constraints — a
/// triangle that must come first among all symbols, two squares and
/// two circles of which exactly one each must be visited, and three
/// forbidden crosses blocking the center.
///
/// Symbol placement keeps two disjoint valid families: "upper" paths
/// through square (2,6) and circle (3,7), and "lower" paths through
/// square (6,2) and circle (7,3); monotone movement makes mixed picks
/// geometrically impossible and forces the triangle at (1,1) to be the
/// first symbol on any valid path.
pub fn grid9x9_symbols() -> Result<Preset> {
    let grid = GridWorld::build(GridWorldSpec {
        width: 9,
        height: 9,
        actions: vec![
            crate::mdp::GridAction::Up,
            crate::mdp::GridAction::Right,
            crate::mdp::GridAction::DiagUpRight,
        ],
        start: [0, 0],
        goal: [8, 8],
        features: crate::mdp::FeatureKind::Both,
        diag_cost: std::f64::consts::SQRT_2,
        discount: 1.0,
    })?;
    let specs = vec![
        ConstraintSpec::Precedence {
            first: [1, 1],
            others: vec![[2, 6], [6, 2], [3, 7], [7, 3], [4, 4], [4, 5], [5, 4]],
        },
        ConstraintSpec::ForbiddenStates { cells: vec![[4, 4], [4, 5], [5, 4]] },
        ConstraintSpec::ExactlyOneOf { cells: vec![[2, 6], [6, 2]] },
        ConstraintSpec::ExactlyOneOf { cells: vec![[3, 7], [7, 3]] },
    ];
    let cset = bind_constraints(&specs, &grid)?;
    Ok(Preset {
        name: "grid9x9_symbols",
        grid,
        constraint_specs: specs,
        cset,
        horizon: 16,
        demo_mix: (0.7, 0.3),
    })
}

/// The floor-navigation benchmark: an 8×8 grid with up/right moves,
/// two obstacle blocks forming a wall at column 3 with a single gap,
/// a must-pass choke point at that gap, and a run-length limit of 3 on
/// repeated actions. Demonstrations are synthesized shortest paths
/// (every monotone path has length 14).
pub fn human_obstacle() -> Result<Preset> {
    let grid = GridWorld::build(GridWorldSpec {
        width: 8,
        height: 8,
        actions: vec![crate::mdp::GridAction::Up, crate::mdp::GridAction::Right],
        start: [0, 0],
        goal: [7, 7],
        features: crate::mdp::FeatureKind::Both,
        diag_cost: std::f64::consts::SQRT_2,
        discount: 1.0,
    })?;
    let specs = vec![
        ConstraintSpec::ForbiddenStates {
            cells: vec![[3, 0], [3, 1], [3, 2], [3, 4], [3, 5], [3, 6], [3, 7]],
        },
        ConstraintSpec::MustPass { cell: [3, 3] },
        ConstraintSpec::MaxConsecutiveSameAction { limit: 3 },
    ];
    let cset = bind_constraints(&specs, &grid)?;
    Ok(Preset {
        name: "human_obstacle",
        grid,
        constraint_specs: specs,
        cset,
        horizon: 14,
        demo_mix: (0.7, 0.3),
    })
}

/// Named presets, as accepted in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Grid9x9Symbols,
    HumanObstacle,
}

impl PresetName {
    pub fn build(self) -> Result<Preset> {
        match self {
            PresetName::Grid9x9Symbols => grid9x9_symbols(),
            PresetName::HumanObstacle => human_obstacle(),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "grid9x9_symbols" => Ok(PresetName::Grid9x9Symbols),
            "human_obstacle" => Ok(PresetName::HumanObstacle),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; available: grid9x9_symbols, human_obstacle"
            ))),
        }
    }
}

/// Environment selector: a named preset or an explicit grid spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvSpec {
    Preset(PresetName),
    Custom(GridWorldSpec),
}

/// Training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Xmen,
    Maxent,
    Reirl,
    Masked,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Xmen => "xmen",
            Method::Maxent => "maxent",
            Method::Reirl => "reirl",
            Method::Masked => "masked",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "xmen" => Ok(Method::Xmen),
            "maxent" => Ok(Method::Maxent),
            "reirl" => Ok(Method::Reirl),
            "masked" => Ok(Method::Masked),
            other => Err(Error::Config(format!(
                "unknown method {other:?}; available: xmen, maxent, reirl, masked"
            ))),
        }
    }
}

fn default_n_demos() -> usize {
    1000
}

fn default_method() -> Method {
    Method::Xmen
}

/// Evaluation-stage sizes: the proposal pool and the resampled output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSizes {
    pub pool_size: usize,
    pub out_size: usize,
}

/// One experiment, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    /// Overrides the preset's constraints when present; required for
    /// custom environments (may be empty).
    #[serde(default)]
    pub constraints: Option<Vec<ConstraintSpec>>,
    /// Overrides the preset's horizon; defaults to the grid's longest
    /// monotone path for custom environments.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_n_demos")]
    pub n_demos: usize,
    pub train: TrainConfig,
    /// Settings for the baseline trainers; derived from `train` when
    /// absent.
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
    pub eval: EvalSizes,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// A ready-to-run configuration for a named preset, scaled so the
    /// full pipeline finishes in minutes rather than the cluster-scale
    /// budgets the original benchmarks used.
    pub fn preset_default(
        name: PresetName,
        method: Method,
        seed: u64,
        output_dir: PathBuf,
    ) -> Self {
        ExperimentConfig {
            env: EnvSpec::Preset(name),
            constraints: None,
            horizon: None,
            method,
            n_demos: 1000,
            train: TrainConfig {
                iterations: 15,
                learning_rate: 0.05,
                demo_batch: 16,
                model_batch: 8,
                sampler: SamplerConfig {
                    delta: 1.2,
                    failure_prob: 0.1,
                    bucket_ratio: 1.2f64 * 1.2,
                    max_buckets: 16,
                    repeats: 16,
                    parity_pool: crate::sampler::ParityPool::TrajectoryVarsOnly,
                    max_consecutive_failures: 4096,
                },
                seed,
                variance_bounds: None,
                track_exact_nll: false,
                solver: SolverConfig::default(),
                max_wall_seconds: None,
            },
            baseline: None,
            eval: EvalSizes { pool_size: 1000, out_size: 1000 },
            output_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(b) = &self.baseline {
            b.validate()?;
        }
        if self.n_demos == 0 {
            return Err(Error::Config("n_demos must be at least 1".into()));
        }
        if self.eval.pool_size < self.eval.out_size {
            return Err(Error::Config(format!(
                "pool_size {} must be at least out_size {}",
                self.eval.pool_size, self.eval.out_size
            )));
        }
        if matches!(self.env, EnvSpec::Custom(_)) && self.constraints.is_none() {
            return Err(Error::Config(
                "custom environments need an explicit constraints list (may be empty)".into(),
            ));
        }
        Ok(())
    }
}

/// A config resolved against its preset: concrete grid, constraints,
/// and horizon.
pub struct ResolvedExperiment {
    pub env_name: String,
    pub grid: GridWorld,
    pub cset: ConstraintSet,
    pub horizon: usize,
    pub demo_mix: (f64, f64),
}

pub fn resolve(cfg: &ExperimentConfig) -> Result<ResolvedExperiment> {
    cfg.validate()?;
    resolve_env(&cfg.env, cfg.constraints.as_deref(), cfg.horizon)
}

/// Resolves an environment description plus optional constraint and
/// horizon overrides into a concrete grid, bound constraints, and
/// horizon — the shared front half of every pipeline stage.
pub fn resolve_env(
    env: &EnvSpec,
    constraints: Option<&[ConstraintSpec]>,
    horizon: Option<usize>,
) -> Result<ResolvedExperiment> {
    let (env_name, grid, preset_specs, preset_horizon, demo_mix) = match env {
        EnvSpec::Preset(name) => {
            let p = name.build()?;
            (
                p.name.to_string(),
                p.grid,
                Some(p.constraint_specs),
                Some(p.horizon),
                p.demo_mix,
            )
        }
        EnvSpec::Custom(spec) => (
            "custom".to_string(),
            GridWorld::build(spec.clone())?,
            None,
            None,
            (0.7, 0.3),
        ),
    };
    let specs = match (constraints, preset_specs) {
        (Some(own), _) => own.to_vec(),
        (None, Some(preset)) => preset,
        (None, None) => Vec::new(),
    };
    let cset = bind_constraints(&specs, &grid)?;
    let horizon = horizon
        .or(preset_horizon)
        .unwrap_or_else(|| grid.default_horizon());
    Ok(ResolvedExperiment { env_name, grid, cset, horizon, demo_mix })
}

/// Synthesizes demonstrations by enumerating the constrained space and
/// sampling with the benchmark's class mixture when both path classes
/// are inhabited, otherwise uniformly.
pub fn synthesize_demos(
    resolved: &ResolvedExperiment,
    theta_truth: &ModelParams,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let space = exact::enumerate(
        resolved.grid.mdp(),
        &resolved.cset,
        resolved.horizon,
        DEFAULT_ENUM_CAP,
    )?;
    if space.is_empty() {
        return Err(Error::Infeasible);
    }
    let feats = space.path_features(resolved.grid.feature_map(), resolved.grid.mdp().discount())?;
    let weighted = space.weighted(&feats, theta_truth);
    let classify = upper_path_classifier(&resolved.grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let has_upper = space.trajectories.iter().any(|t| classify(t));
    let has_lower = space.trajectories.iter().any(|t| !classify(t));
    if has_upper && has_lower {
        gen_demos(&space, &weighted, classify, resolved.demo_mix, n, &mut rng)
    } else {
        exact_sample(&space, &weighted, &mut rng, n)
    }
}

/// Everything `run` leaves behind, echoed back for callers.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub method: String,
    pub env: String,
    pub valid_fraction: f64,
    pub kl: f64,
    pub n_generated: usize,
    pub oracle_queries: u64,
    pub train_wall_seconds: f64,
    pub total_wall_seconds: f64,
    pub warnings: Vec<String>,
    pub output_dir: PathBuf,
}

/// Writes trajectories as JSONL, one grid-coordinate record per line
/// (`{"states":[[x,y],…],"actions":["right",…]}`).
pub fn write_jsonl(path: &Path, grid: &GridWorld, trajs: &[Trajectory]) -> Result<()> {
    use std::io::Write as _;
    let mut f = std::fs::File::create(path)?;
    for t in trajs {
        let rec = grid.trajectory_to_record(t);
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::Input(format!("serializing trajectory: {e}")))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Reads a trajectory JSONL file written by [`write_jsonl`].
pub fn read_jsonl(path: &Path, grid: &GridWorld) -> Result<Vec<Trajectory>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(line)
            .map_err(|e| Error::Input(format!("line {}: {e}", i + 1)))?;
        out.push(grid.trajectory_from_record(&rec)?);
    }
    Ok(out)
}

fn to_baseline_config(cfg: &ExperimentConfig) -> BaselineConfig {
    cfg.baseline.clone().unwrap_or(BaselineConfig {
        iterations: cfg.train.iterations,
        learning_rate: cfg.train.learning_rate,
        rollouts: 2 * cfg.train.model_batch,
        seed: cfg.train.seed,
        max_wall_seconds: cfg.train.max_wall_seconds,
    })
}

/// Runs the full pipeline — synthesize demonstrations, train with the
/// selected method, generate trajectories, evaluate — and writes
/// `demos.jsonl`, `theta.json`, `trace.csv`, `trajectories.jsonl`,
/// `metrics.csv`, `occupancy.csv`, and `stats.json` under
/// `output_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    use std::io::Write as _;
    let total_started = Instant::now();
    let resolved = resolve(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mdp = resolved.grid.mdp();
    let fmap = resolved.grid.feature_map();
    let dim = fmap.dim();

    // demonstrations from the ground-truth model (uniform over the
    // valid set, biased by the preset's class mixture)
    let theta_truth = ModelParams::zeros(dim);
    let demos = synthesize_demos(&resolved, &theta_truth, cfg.n_demos, mix64(cfg.train.seed, 0xD))?;
    write_jsonl(&cfg.output_dir.join("demos.jsonl"), &resolved.grid, &demos)?;

    // train
    let train_started = Instant::now();
    let mut warnings: Vec<String> = Vec::new();
    let mut trace_csv = String::from("k,grad_norm,queries,wall_ms,exact_nll\n");
    let mut train_queries = 0u64;
    let theta_bar = match cfg.method {
        Method::Xmen => {
            let (theta_bar, state) = train(
                &cfg.train,
                mdp,
                fmap,
                &resolved.cset,
                resolved.horizon,
                &demos,
                &ModelParams::zeros(dim),
            )?;
            for row in &state.trace {
                let nll = row.exact_nll.map(|v| v.to_string()).unwrap_or_default();
                trace_csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.k, row.grad_norm, row.queries, row.wall_ms, nll
                ));
            }
            warnings.extend(state.warnings.iter().cloned());
            train_queries = state.stats.queries();
            theta_bar
        }
        Method::Maxent => {
            let run = maxent_train(mdp, fmap, &demos, &to_baseline_config(cfg), resolved.horizon)?;
            warnings.extend(run.warnings);
            run.theta_bar
        }
        Method::Reirl => {
            let reference = uniform_policy(mdp);
            let run = reirl_train(
                mdp,
                fmap,
                &demos,
                &to_baseline_config(cfg),
                resolved.horizon,
                &reference,
            )?;
            warnings.extend(run.warnings);
            run.theta_bar
        }
        Method::Masked => {
            let run = masked_maxent_train(
                mdp,
                fmap,
                &demos,
                &to_baseline_config(cfg),
                resolved.horizon,
                &resolved.cset,
            )?;
            warnings.extend(run.warnings);
            run.theta_bar
        }
    };
    let train_wall = train_started.elapsed().as_secs_f64();

    // generate
    let gen_stats = OracleStats::default();
    let generated = match cfg.method {
        Method::Xmen => {
            let (enc, rows) = encode(mdp, &resolved.cset, resolved.horizon)?;
            let ctx = SamplerContext {
                mdp,
                fmap,
                enc: &enc,
                rows: &rows,
                solver: &cfg.train.solver,
            };
            crate::eval::generate(
                &theta_bar,
                ctx,
                &cfg.train.sampler,
                cfg.eval.pool_size,
                cfg.eval.out_size,
                mix64(cfg.train.seed, 0xE),
                &gen_stats,
            )?
        }
        Method::Maxent | Method::Reirl => policy_rollouts(
            mdp,
            fmap,
            &theta_bar,
            resolved.horizon,
            cfg.eval.out_size,
            mix64(cfg.train.seed, 0xE),
        )?,
        Method::Masked => {
            let masked = masked_mdp(mdp, &resolved.cset)?;
            policy_rollouts(
                &masked,
                fmap,
                &theta_bar,
                resolved.horizon,
                cfg.eval.out_size,
                mix64(cfg.train.seed, 0xE),
            )?
        }
    };
    write_jsonl(&cfg.output_dir.join("trajectories.jsonl"), &resolved.grid, &generated)?;

    // evaluate
    let vf = valid_fraction(&generated, &resolved.cset)?;
    let classify = upper_path_classifier(&resolved.grid);
    let kl = path_kl(&generated, &demos, classify)?;
    let occ = occupancy(&generated, mdp.n_states())?;
    write_metrics_csv(
        &cfg.output_dir.join("metrics.csv"),
        &[MetricsRow {
            method: cfg.method.name().to_string(),
            valid_fraction: vf,
            kl,
            n: generated.len(),
        }],
    )?;
    write_occupancy_csv(&cfg.output_dir.join("occupancy.csv"), &resolved.grid, &occ)?;

    // remaining artifacts
    let theta_json = serde_json::json!({
        "method": cfg.method.name(),
        "feature_dim": dim,
        "theta": theta_bar.theta,
    });
    std::fs::write(
        cfg.output_dir.join("theta.json"),
        serde_json::to_string_pretty(&theta_json)
            .map_err(|e| Error::Input(format!("serializing theta: {e}")))?,
    )?;
    let mut f = std::fs::File::create(cfg.output_dir.join("trace.csv"))?;
    f.write_all(trace_csv.as_bytes())?;

    let total_wall = total_started.elapsed().as_secs_f64();
    let stats_json = serde_json::json!({
        "method": cfg.method.name(),
        "env": resolved.env_name,
        "oracle": {
            "train_queries": train_queries,
            "generate_queries": gen_stats.queries(),
            "generate_decisions": gen_stats.snapshot().decisions,
        },
        "train_wall_seconds": train_wall,
        "total_wall_seconds": total_wall,
        "budgets": {
            "reference": { "train_wall_seconds": 14400.0, "sgd_samples_per_iteration": 16 },
            "preset": {
                "train_wall_seconds": cfg.train.max_wall_seconds,
                "sgd_samples_per_iteration": 2 * cfg.train.model_batch,
            },
        },
        "n_demos": cfg.n_demos,
        "pool_size": cfg.eval.pool_size,
        "out_size": cfg.eval.out_size,
        "warnings": warnings,
    });
    std::fs::write(
        cfg.output_dir.join("stats.json"),
        serde_json::to_string_pretty(&stats_json)
            .map_err(|e| Error::Input(format!("serializing stats: {e}")))?,
    )?;

    Ok(RunSummary {
        method: cfg.method.name().to_string(),
        env: resolved.env_name,
        valid_fraction: vf,
        kl,
        n_generated: generated.len(),
        oracle_queries: train_queries + gen_stats.queries(),
        train_wall_seconds: train_wall,
        total_wall_seconds: total_wall,
        warnings,
        output_dir: cfg.output_dir.clone(),
    })
}
