//! Command-line front end: seeded, reproducible runs of every pipeline
//! stage — demonstration synthesis, training, constrained sampling,
//! evaluation, exhaustive enumeration, and standalone solver checks.
//!
//! Every subcommand draws all randomness from its `--seed` flag, so a
//! repeated invocation with the same flags writes byte-identical
//! trajectory and metric files. Errors are reported as a single JSON
//! record on stderr with a nonzero exit status.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use xmen::baselines::{masked_maxent_train, maxent_train, reirl_train, uniform_policy};
use xmen::experiment::{read_jsonl, resolve_env, write_jsonl};
use xmen::{
    batch_sample, encode, occupancy, parse_dump, path_kl, solve, solve_all_count, synthesize_demos,
    upper_path_classifier, valid_fraction, write_metrics_csv, write_occupancy_csv, BaselineConfig,
    ConstraintSpec, CountOutcome, EnvSpec, Error, ExperimentConfig, GridWorldSpec, MetricsRow,
    Method, ModelParams, OracleStats, PresetName, ResolvedExperiment, Result, SamplerConfig,
    SamplerContext, SolveOutcome, SolverConfig, TrainConfig, DEFAULT_ENUM_CAP,
};

#[derive(Parser)]
#[command(
    name = "xmen",
    version,
    about = "Constrained inverse reinforcement learning with guaranteed-valid sampling"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize constraint-satisfying demonstrations as JSONL
    GenDemos(GenDemosArgs),
    /// Learn reward parameters from a demonstration file
    Train(TrainArgs),
    /// Draw constraint-satisfying trajectories at fixed parameters
    Sample(SampleArgs),
    /// Score a trajectory file: validity, class KL, state occupancy
    Eval(EvalArgs),
    /// Full pipeline: demos → train → generate → eval, all artifacts on disk
    Run(RunArgs),
    /// Exhaustively enumerate the feasible set; write count and partition
    Enumerate(EnumerateArgs),
    /// Solve or count a plain-text pseudo-boolean/parity dump
    OracleCheck(OracleCheckArgs),
}

/// Environment selection shared by the stage subcommands.
#[derive(Args)]
struct EnvArgs {
    /// Preset name (grid9x9_symbols, human_obstacle) or path to a
    /// grid-world JSON spec
    #[arg(long)]
    env: String,
    /// JSON file with a list of constraint specs; overrides the
    /// preset's list (custom grids default to no constraints)
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Trajectory length cap (defaults to the preset's, or the grid's
    /// longest monotone path)
    #[arg(long)]
    horizon: Option<usize>,
}

impl EnvArgs {
    fn resolve(&self) -> Result<ResolvedExperiment> {
        let env = parse_env(&self.env)?;
        let specs = match &self.constraints {
            Some(path) => Some(load_constraint_file(path)?),
            None => None,
        };
        resolve_env(&env, specs.as_deref(), self.horizon)
    }
}

/// Hashing-sampler knobs shared by `train` and `sample`.
#[derive(Args)]
struct SamplerArgs {
    /// Multiplicative approximation band of the sampler (must stay
    /// ≤ √2 for training)
    #[arg(long, default_value_t = 1.2)]
    delta: f64,
    /// Tolerated per-sample failure probability
    #[arg(long, default_value_t = 0.1)]
    failure_prob: f64,
    /// Geometric ratio between weight buckets (default: delta²)
    #[arg(long)]
    bucket_ratio: Option<f64>,
    #[arg(long, default_value_t = 16)]
    max_buckets: usize,
    /// Attempts per sample before conceding failure
    #[arg(long, default_value_t = 16)]
    repeats: usize,
    /// Abort a batch after this many failed attempts in a row
    #[arg(long, default_value_t = 4096)]
    max_consecutive_failures: usize,
}

impl SamplerArgs {
    fn build(&self) -> Result<SamplerConfig> {
        let mut cfg = SamplerConfig::new(self.delta, self.failure_prob)?;
        if let Some(r) = self.bucket_ratio {
            cfg.bucket_ratio = r;
        }
        cfg.max_buckets = self.max_buckets;
        cfg.repeats = self.repeats;
        cfg.max_consecutive_failures = self.max_consecutive_failures;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Embedded-solver limits shared by the oracle-backed subcommands.
#[derive(Args)]
struct SolverArgs {
    /// Search decisions permitted per oracle call
    #[arg(long, default_value_t = 5_000_000)]
    decision_budget: u64,
    /// Skip the GF(2) parity pre-elimination
    #[arg(long)]
    no_pre_eliminate: bool,
}

impl SolverArgs {
    fn build(&self) -> SolverConfig {
        SolverConfig {
            decision_budget: self.decision_budget,
            pre_eliminate: !self.no_pre_eliminate,
        }
    }
}

#[derive(Args)]
struct GenDemosArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Demonstrations to write
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ground-truth parameters, comma-separated (default: zeros)
    #[arg(long)]
    theta: Option<String>,
    /// Fraction of demonstrations from the upper path class
    /// (default: the preset's mixture)
    #[arg(long)]
    mix: Option<f64>,
    /// Output JSONL path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Demonstration JSONL file
    #[arg(long)]
    demos: PathBuf,
    /// Algorithm: xmen, maxent, reirl, or masked
    #[arg(long, default_value = "xmen")]
    method: String,
    /// Output path for the learned parameters (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration trace CSV (default: --out with a .trace.csv
    /// extension)
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Gradient steps; the result averages this many iterates
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// Demonstrations sampled per step
    #[arg(long, default_value_t = 16)]
    demo_batch: usize,
    /// Half-batch of model samples per step (the estimator uses two)
    #[arg(long, default_value_t = 8)]
    model_batch: usize,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Known demo- and model-side feature variance bounds "a,b" for
    /// the step-size guard (default: estimated from data)
    #[arg(long)]
    variance_bounds: Option<String>,
    /// Record the exact negative log-likelihood each iteration
    /// (enumerates the space — small instances only)
    #[arg(long)]
    track_exact_nll: bool,
    /// Wall-clock budget in seconds; training stops early and returns
    /// the average of the completed iterates
    #[arg(long)]
    max_wall_seconds: Option<f64>,
    /// Model rollouts per baseline gradient step
    /// (default: 2 × model-batch)
    #[arg(long)]
    rollouts: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    /// Problem JSON: {"env": <preset or grid spec>, "constraints":
    /// [...], "horizon": n}
    #[arg(long)]
    config: PathBuf,
    /// Parameter vector, comma-separated
    #[arg(long)]
    theta: String,
    /// Trajectories to draw
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSONL path
    #[arg(long)]
    out: PathBuf,
    /// Stats JSON path (default: printed to stdout)
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Problem JSON: {"env": <preset or grid spec>, "constraints":
    /// [...], "horizon": n}
    #[arg(long)]
    config: PathBuf,
    /// Trajectories to score (JSONL)
    #[arg(long)]
    trajectories: PathBuf,
    /// Demonstrations for the class-KL reference (JSONL)
    #[arg(long)]
    demos: PathBuf,
    /// Method label recorded in metrics.csv
    #[arg(long, default_value = "xmen")]
    method: String,
    /// Directory for metrics.csv and occupancy.csv
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Full experiment config JSON; replaces all flags below
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Preset name (grid9x9_symbols, human_obstacle)
    #[arg(long, required_unless_present = "config")]
    preset: Option<String>,
    /// Algorithm: xmen, maxent, reirl, or masked
    #[arg(long, default_value = "xmen")]
    method: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for all artifacts
    #[arg(long, required_unless_present = "config")]
    output_dir: Option<PathBuf>,
    /// Demonstrations to synthesize
    #[arg(long)]
    n_demos: Option<usize>,
    /// Training iterations
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Proposal pool drawn before resampling
    #[arg(long)]
    pool_size: Option<usize>,
    /// Trajectories kept after resampling
    #[arg(long)]
    out_size: Option<usize>,
    /// Wall-clock training budget in seconds
    #[arg(long)]
    max_wall_seconds: Option<f64>,
}

#[derive(Args)]
struct EnumerateArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Parameters weighting the partition sum (default: zeros)
    #[arg(long)]
    theta: Option<String>,
    /// Abort if the feasible set exceeds this many trajectories
    #[arg(long, default_value_t = DEFAULT_ENUM_CAP)]
    cap: usize,
    /// Output JSON path (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleCheckArgs {
    /// Plain-text constraint dump (`±c·x_i … ⋈ b` rows, `x` parity
    /// rows)
    input: PathBuf,
    /// Also run the exact model counter
    #[arg(long)]
    count: bool,
    /// Give up counting past this many assignments
    #[arg(long, default_value_t = 1_000_000)]
    count_cap: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": { "kind": error_kind(&e), "message": e.to_string() }
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenDemos(a) => gen_demos_cmd(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Sample(a) => sample_cmd(a),
        Cmd::Eval(a) => eval_cmd(a),
        Cmd::Run(a) => run_cmd(a),
        Cmd::Enumerate(a) => enumerate_cmd(a),
        Cmd::OracleCheck(a) => oracle_check_cmd(a),
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Input(_) => "input",
        Error::Infeasible => "infeasible",
        Error::Encoding(_) => "encoding",
        Error::Decode(_) => "decode",
        Error::EnumerationOverflow { .. } => "enumeration-overflow",
        Error::DegenerateBatch => "degenerate-batch",
        Error::Sampling(_) => "sampling",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// A problem description loadable from JSON: environment plus optional
/// constraint and horizon overrides.
#[derive(Deserialize)]
struct ProblemConfig {
    env: EnvSpec,
    #[serde(default)]
    constraints: Option<Vec<ConstraintSpec>>,
    #[serde(default)]
    horizon: Option<usize>,
}

fn parse_env(text: &str) -> Result<EnvSpec> {
    if let Ok(name) = PresetName::parse(text) {
        return Ok(EnvSpec::Preset(name));
    }
    let raw = std::fs::read_to_string(text).map_err(|e| {
        Error::Input(format!(
            "--env {text:?} is neither a preset name nor a readable file: {e}"
        ))
    })?;
    let spec: GridWorldSpec = serde_json::from_str(&raw)?;
    Ok(EnvSpec::Custom(spec))
}

fn load_constraint_file(path: &Path) -> Result<Vec<ConstraintSpec>> {
    let raw = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&raw)?)
}

fn load_problem(path: &Path) -> Result<ResolvedExperiment> {
    let raw = std::fs::read_to_string(path)?;
    let cfg: ProblemConfig = serde_json::from_str(&raw)?;
    resolve_env(&cfg.env, cfg.constraints.as_deref(), cfg.horizon)
}

fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| Error::Input(format!("bad number {:?}: {e}", p.trim())))
        })
        .collect()
}

fn parse_theta(text: Option<&str>, dim: usize) -> Result<ModelParams> {
    let theta = match text {
        Some(t) => {
            let v = parse_vector(t)?;
            if v.len() != dim {
                return Err(Error::Input(format!(
                    "theta has {} entries but the feature map has dimension {dim}",
                    v.len()
                )));
            }
            ModelParams::new(v)?
        }
        None => ModelParams::zeros(dim),
    };
    Ok(theta)
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn gen_demos_cmd(a: GenDemosArgs) -> Result<()> {
    let mut resolved = a.env.resolve()?;
    if let Some(mix) = a.mix {
        if !(0.0..=1.0).contains(&mix) {
            return Err(Error::Config(format!("--mix must lie in [0, 1], got {mix}")));
        }
        resolved.demo_mix = (mix, 1.0 - mix);
    }
    let theta = parse_theta(a.theta.as_deref(), resolved.grid.feature_map().dim())?;
    let demos = synthesize_demos(&resolved, &theta, a.count, a.seed)?;
    write_jsonl(&a.out, &resolved.grid, &demos)?;
    write_json(
        None,
        &serde_json::json!({
            "env": resolved.env_name,
            "written": demos.len(),
            "path": a.out,
        }),
    )
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let resolved = a.env.resolve()?;
    let mdp = resolved.grid.mdp();
    let fmap = resolved.grid.feature_map();
    let demos = read_jsonl(&a.demos, &resolved.grid)?;
    let method = Method::parse(&a.method)?;

    let variance_bounds = match &a.variance_bounds {
        Some(text) => {
            let v = parse_vector(text)?;
            if v.len() != 2 {
                return Err(Error::Input(format!(
                    "--variance-bounds needs exactly two numbers, got {}",
                    v.len()
                )));
            }
            Some((v[0], v[1]))
        }
        None => None,
    };

    let mut trace_csv = String::from("k,grad_norm,queries,wall_ms,exact_nll\n");
    let mut queries = 0u64;
    let (theta_bar, warnings) = match method {
        Method::Xmen => {
            let cfg = TrainConfig {
                iterations: a.iterations,
                learning_rate: a.learning_rate,
                demo_batch: a.demo_batch,
                model_batch: a.model_batch,
                sampler: a.sampler.build()?,
                seed: a.seed,
                variance_bounds,
                track_exact_nll: a.track_exact_nll,
                solver: a.solver.build(),
                max_wall_seconds: a.max_wall_seconds,
            };
            let (theta_bar, state) = xmen::train(
                &cfg,
                mdp,
                fmap,
                &resolved.cset,
                resolved.horizon,
                &demos,
                &ModelParams::zeros(fmap.dim()),
            )?;
            for row in &state.trace {
                let nll = row.exact_nll.map(|v| v.to_string()).unwrap_or_default();
                trace_csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.k, row.grad_norm, row.queries, row.wall_ms, nll
                ));
            }
            queries = state.stats.queries();
            (theta_bar, state.warnings)
        }
        baseline => {
            let cfg = BaselineConfig {
                iterations: a.iterations,
                learning_rate: a.learning_rate,
                rollouts: a.rollouts.unwrap_or(2 * a.model_batch),
                seed: a.seed,
                max_wall_seconds: a.max_wall_seconds,
            };
            let run = match baseline {
                Method::Maxent => maxent_train(mdp, fmap, &demos, &cfg, resolved.horizon)?,
                Method::Reirl => {
                    let reference = uniform_policy(mdp);
                    reirl_train(mdp, fmap, &demos, &cfg, resolved.horizon, &reference)?
                }
                Method::Masked => {
                    masked_maxent_train(mdp, fmap, &demos, &cfg, resolved.horizon, &resolved.cset)?
                }
                Method::Xmen => unreachable!("handled above"),
            };
            (run.theta_bar, run.warnings)
        }
    };

    let trace_path = a.trace.unwrap_or_else(|| a.out.with_extension("trace.csv"));
    std::fs::write(&trace_path, trace_csv)?;
    write_json(
        Some(&a.out),
        &serde_json::json!({
            "method": method.name(),
            "feature_dim": fmap.dim(),
            "theta": theta_bar.theta,
            "warnings": warnings,
        }),
    )?;
    write_json(
        None,
        &serde_json::json!({
            "method": method.name(),
            "theta": theta_bar.theta,
            "oracle_queries": queries,
            "out": a.out,
            "trace": trace_path,
        }),
    )
}

fn sample_cmd(a: SampleArgs) -> Result<()> {
    let started = Instant::now();
    let resolved = load_problem(&a.config)?;
    let mdp = resolved.grid.mdp();
    let fmap = resolved.grid.feature_map();
    let theta = parse_theta(Some(&a.theta), fmap.dim())?;
    let sampler_cfg = a.sampler.build()?;
    let solver_cfg = a.solver.build();

    let (enc, rows) = encode(mdp, &resolved.cset, resolved.horizon)?;
    let ctx = SamplerContext { mdp, fmap, enc: &enc, rows: &rows, solver: &solver_cfg };
    let stats = OracleStats::default();
    let report = batch_sample(a.count, &theta, &ctx, &sampler_cfg, a.seed, &stats)?;
    write_jsonl(&a.out, &resolved.grid, &report.trajectories)?;

    write_json(
        a.stats.as_deref(),
        &serde_json::json!({
            "env": resolved.env_name,
            "requested": a.count,
            "returned": report.trajectories.len(),
            "parity_count": report.parity_count,
            "attempts": report.attempts,
            "attempts_to_first": report.attempts_to_first,
            "failures": report.failures,
            "first_sample_queries": report.first_sample_queries,
            "oracle": report.stats,
            "wall_seconds": started.elapsed().as_secs_f64(),
            "out": a.out,
        }),
    )
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let resolved = load_problem(&a.config)?;
    let trajs = read_jsonl(&a.trajectories, &resolved.grid)?;
    let demos = read_jsonl(&a.demos, &resolved.grid)?;

    let vf = valid_fraction(&trajs, &resolved.cset)?;
    let classify = upper_path_classifier(&resolved.grid);
    let kl = path_kl(&trajs, &demos, classify)?;
    let occ = occupancy(&trajs, resolved.grid.mdp().n_states())?;

    std::fs::create_dir_all(&a.out_dir)?;
    write_metrics_csv(
        &a.out_dir.join("metrics.csv"),
        &[MetricsRow {
            method: a.method.clone(),
            valid_fraction: vf,
            kl,
            n: trajs.len(),
        }],
    )?;
    write_occupancy_csv(&a.out_dir.join("occupancy.csv"), &resolved.grid, &occ)?;
    write_json(
        None,
        &serde_json::json!({
            "method": a.method,
            "valid_fraction": vf,
            "kl": kl,
            "n": trajs.len(),
            "out_dir": a.out_dir,
        }),
    )
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path)?;
            serde_json::from_str::<ExperimentConfig>(&raw)?
        }
        None => {
            let preset = a.preset.as_deref().expect("clap enforces --preset without --config");
            let output_dir =
                a.output_dir.clone().expect("clap enforces --output-dir without --config");
            ExperimentConfig::preset_default(
                PresetName::parse(preset)?,
                Method::parse(&a.method)?,
                a.seed,
                output_dir,
            )
        }
    };
    if let Some(n) = a.n_demos {
        cfg.n_demos = n;
    }
    if let Some(n) = a.iterations {
        cfg.train.iterations = n;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(n) = a.pool_size {
        cfg.eval.pool_size = n;
    }
    if let Some(n) = a.out_size {
        cfg.eval.out_size = n;
    }
    if let Some(s) = a.max_wall_seconds {
        cfg.train.max_wall_seconds = Some(s);
    }
    let summary = xmen::run(&cfg)?;
    write_json(None, &serde_json::to_value(&summary)?)
}

fn enumerate_cmd(a: EnumerateArgs) -> Result<()> {
    let resolved = a.env.resolve()?;
    let mdp = resolved.grid.mdp();
    let fmap = resolved.grid.feature_map();
    let theta = parse_theta(a.theta.as_deref(), fmap.dim())?;
    let space = xmen::enumerate(mdp, &resolved.cset, resolved.horizon, a.cap)?;
    let feats = space.path_features(fmap, mdp.discount())?;
    let weighted = space.weighted(&feats, &theta);
    write_json(
        a.out.as_deref(),
        &serde_json::json!({
            "env": resolved.env_name,
            "horizon": resolved.horizon,
            "count": space.trajectories.len(),
            "partition": weighted.partition,
            "theta": theta.theta,
        }),
    )
}

fn oracle_check_cmd(a: OracleCheckArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input)?;
    let problem = parse_dump(&text)?;
    let solver_cfg = a.solver.build();
    let stats = OracleStats::default();

    let solve_json = match solve(&problem, a.seed, &solver_cfg, &stats) {
        SolveOutcome::Sat(assignment) => {
            let true_vars: Vec<usize> =
                assignment.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
            serde_json::json!({ "outcome": "sat", "true_vars": true_vars })
        }
        SolveOutcome::Unsat => serde_json::json!({ "outcome": "unsat" }),
        SolveOutcome::Timeout => serde_json::json!({ "outcome": "timeout" }),
    };
    let count_json = if a.count {
        match solve_all_count(&problem, a.count_cap, &stats) {
            CountOutcome::Exact(n) => serde_json::json!({ "outcome": "exact", "count": n }),
            CountOutcome::ExceedsCap => {
                serde_json::json!({ "outcome": "exceeds-cap", "cap": a.count_cap })
            }
        }
    } else {
        serde_json::Value::Null
    };
    write_json(
        None,
        &serde_json::json!({
            "input": a.input,
            "n_vars": problem.n_vars,
            "linear_rows": problem.linear.len(),
            "parity_rows": problem.parity.len(),
            "solve": solve_json,
            "count": count_json,
            "oracle": stats.snapshot(),
        }),
    )
}
