//! Maximum-entropy inverse reinforcement learning under hard
//! combinatorial trajectory constraints.
//!
//! The crate learns reward parameters from demonstrations on finite
//! MDPs while guaranteeing that every trajectory produced by the
//! learned model satisfies a set of hard constraints. The engine is a
//! parity-hashing sampler: trajectory spaces are compiled to binary
//! variables with pseudo-boolean constraints, random XOR constraints
//! hash the space down to near-singletons, and an embedded complete
//! solver extracts constraint-satisfying samples with bounded
//! distributional distortion.

pub mod baselines;
pub mod constraints;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod exact;
pub mod experiment;
pub mod learner;
pub mod mdp;
pub mod oracle;
pub mod sampler;

pub use baselines::{
    masked_maxent_train, masked_mdp, maxent_fb, maxent_train, policy_rollouts, reirl_train,
    uniform_policy, BaselineConfig, BaselineRun, VisitationTable,
};
pub use constraints::{
    bind_constraints, indicator, required_encoding, Constraint, ConstraintSet, ConstraintSpec,
    EncodingKind,
};
pub use encoding::{
    decode, dump_problem, encode, encode_with_kind, BinaryEncoding, LinearConstraint, Relation,
    VarId, VarMeaning, XorConstraint,
};
pub use error::{Error, Result};
pub use eval::{
    generate, occupancy, path_kl, resample, valid_fraction, write_metrics_csv,
    write_occupancy_csv, MetricsRow, OccupancyMap,
};
pub use exact::{
    enumerate, exact_sample, gen_demos, upper_path_classifier, EnumeratedSpace, WeightedSpace,
    DEFAULT_ENUM_CAP,
};
pub use experiment::{
    grid9x9_symbols, human_obstacle, read_jsonl, resolve, resolve_env, run, synthesize_demos,
    write_jsonl, EnvSpec, EvalSizes, ExperimentConfig, Method, Preset, PresetName,
    ResolvedExperiment, RunSummary,
};
pub use learner::{
    estimate_gradient, exact_gradient, minimize_nll_exact, nll_exact, train, ExactDescent,
    TraceRow, TrainConfig, TrainState,
};
pub use mdp::{
    build_gridworld, path_feature, trajectory_energy, transition_prob, ActionId, FeatureKind,
    FeatureMap, GridAction, GridWorld, GridWorldSpec, Mdp, ModelParams, StateId, Trajectory,
    TrajectoryRecord,
};
pub use oracle::{
    parse_dump, solve, solve_all_count, CountOutcome, OracleProblem, OracleStats, SolveOutcome,
    SolverConfig,
};
pub use sampler::{
    batch_sample, random_parity, repeats_for, sample, BatchReport, ParityPool, SampleOutcome,
    SampleResult, SamplerConfig, SamplerContext,
};
