//! Near-uniform weighted sampling of constraint-satisfying trajectories
//! through random parity hashing.
//!
//! The target distribution is `P(τ) ∝ exp(−θᵀf(τ))` restricted to
//! trajectories that satisfy every hard constraint. Rejection sampling
//! from the unconstrained space collapses when valid trajectories are
//! rare, and explicit enumeration collapses when the space is large.
//! Instead we:
//!
//! 1. compile the constrained trajectory space into a pseudo-boolean
//!    problem ([`crate::encoding`]);
//! 2. discretize the trajectory weights into geometric buckets, realized
//!    by one-hot bucket selectors plus counter ("copy") bits, so each
//!    trajectory stands behind a number of augmented assignments roughly
//!    proportional to its weight;
//! 3. intersect the augmented space with random parity constraints until
//!    a probe reports a lone survivor — each added parity cuts the space
//!    in half in expectation, so the right parity count is near the log
//!    of the augmented space size, found by doubling then bisection;
//! 4. extract the survivor and accept it with a bucket-aware probability
//!    that exactly cancels the within-bucket weight distortion.
//!
//! Every emitted trajectory decodes from a satisfying assignment, so the
//! hard-constraint guarantee is structural: invalid trajectories cannot
//! be produced, whatever the randomness does. The price of hashing is a
//! bounded multiplicative distortion of the sampled distribution — the
//! `delta` parameter — plus a failure probability, driven below
//! `failure_prob` by repeating attempts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{
    decode, BinaryEncoding, LinearConstraint, VarId, XorConstraint,
};
use crate::error::{Error, Result};
use crate::mdp::{FeatureMap, Mdp, ModelParams, Trajectory};
use crate::oracle::{
    self, OracleProblem, OracleStats, OracleStatsSnapshot, SolveOutcome, SolverConfig,
};

/// Multiplier on `log₂(pool size)` bounding how many probes one parity
/// search may spend. Recorded here (rather than in a config) so query
/// accounting bounds can reference a single pinned constant.
pub const SEARCH_PROBE_FACTOR: usize = 4;

/// Which variables random parities may range over. Hashing must see the
/// trajectory identity and nothing that is merely derived from it, so
/// the only supported pool is the trajectory-defining variables (plus
/// the copy bits introduced by weight discretization, which are part of
/// the augmented space's identity by construction). Bucket selectors and
/// compilation auxiliaries are excluded: they are functions of the
/// trajectory variables, and hashing them would add nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityPool {
    TrajectoryVarsOnly,
}

/// Tuning knobs for the parity-hashing sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Approximation factor: the sampled distribution is within a
    /// multiplicative `delta` band of the target. Must exceed 1; keep it
    /// ≤ √2 when the samples feed gradient estimation.
    pub delta: f64,
    /// Tolerated per-sample failure probability; attempts are repeated
    /// until the residual failure mass falls under it.
    pub failure_prob: f64,
    /// Geometric ratio between adjacent weight buckets. Defaults to
    /// `delta²`: the within-bucket distortion is at most one ratio, and
    /// the acceptance step cancels it exactly, leaving the hashing
    /// approximation as the only source of distortion.
    pub bucket_ratio: f64,
    /// Cap on the number of weight buckets; weights past the last bucket
    /// boundary are clamped into the last (lightest) bucket.
    pub max_buckets: usize,
    /// Attempts per [`sample`] call before conceding failure.
    pub repeats: usize,
    /// Variable pool for random parities.
    pub parity_pool: ParityPool,
    /// Abort a batch after this many failed attempts in a row.
    #[serde(default = "default_failure_cap")]
    pub max_consecutive_failures: usize,
}

fn default_failure_cap() -> usize {
    4096
}

impl SamplerConfig {
    /// A configuration with the documented defaults: bucket ratio
    /// `delta²`, 16 buckets, 16 repeats.
    pub fn new(delta: f64, failure_prob: f64) -> Result<Self> {
        let cfg = Self {
            delta,
            failure_prob,
            bucket_ratio: delta * delta,
            max_buckets: 16,
            repeats: 16,
            parity_pool: ParityPool::TrajectoryVarsOnly,
            max_consecutive_failures: default_failure_cap(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 1.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!(
                "delta must be a finite number > 1, got {}",
                self.delta
            )));
        }
        if !(self.failure_prob > 0.0 && self.failure_prob < 1.0) {
            return Err(Error::Config(format!(
                "failure_prob must lie in (0, 1), got {}",
                self.failure_prob
            )));
        }
        if !(self.bucket_ratio > 1.0 && self.bucket_ratio.is_finite()) {
            return Err(Error::Config(format!(
                "bucket_ratio must be a finite number > 1, got {}",
                self.bucket_ratio
            )));
        }
        if self.max_buckets == 0 {
            return Err(Error::Config("max_buckets must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        Ok(())
    }
}

/// Attempt count that drives the residual failure probability of one
/// [`sample`] call below `failure_prob`, scaling with the problem size.
pub fn repeats_for(n_vars: usize, failure_prob: f64) -> usize {
    ((n_vars.max(2) as f64 / failure_prob).ln().ceil() as usize).max(1)
}

/// What one sampling attempt chain produced.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleResult {
    Success(Trajectory),
    Failure,
}

/// Outcome of a [`sample`] call, with the diagnostics needed for query
/// accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub result: SampleResult,
    /// Parity constraints in force when the returned survivor was found
    /// (or last tried, on failure).
    pub parity_count_used: usize,
    /// Oracle queries this call consumed. Measured as the difference of
    /// the shared counter, so give each call its own accumulator when an
    /// exact per-call figure matters.
    pub oracle_queries_used: u64,
}

/// Everything a sampling run needs to know about the problem: the model
/// and its features, the compiled encoding, and the solver budget.
#[derive(Debug, Clone, Copy)]
pub struct SamplerContext<'a> {
    pub mdp: &'a Mdp,
    pub fmap: &'a FeatureMap,
    pub enc: &'a BinaryEncoding,
    /// The encoding's base constraints (structure + hard constraints).
    pub rows: &'a [LinearConstraint],
    pub solver: &'a SolverConfig,
}

/// Report of a [`batch_sample`] run.
#[derive(Debug, Clone)]
pub struct BatchReport {
    pub trajectories: Vec<Trajectory>,
    /// Parity count discovered by the first successful attempt and
    /// reused by every later attempt in the batch.
    pub parity_count: usize,
    /// Total attempts, including failures.
    pub attempts: u64,
    /// Attempts consumed up to and including the first success.
    pub attempts_to_first: u64,
    /// Failed attempts.
    pub failures: u64,
    /// Oracle queries consumed up to and including the first success.
    pub first_sample_queries: u64,
    /// Counter snapshot at the end of the batch.
    pub stats: OracleStatsSnapshot,
}

// ---------------------------------------------------------------------------
// Random parities
// ---------------------------------------------------------------------------

/// Draws a random parity constraint over `n_vars` variables: each
/// variable joins independently with probability 1/2 and the target bit
/// is uniform. The induced hash family is pairwise independent. The one
/// unsatisfiable draw (empty support, odd bit) is redrawn, which biases
/// survival probabilities by less than 2^−(n+1).
pub fn random_parity<R: Rng>(n_vars: usize, rng: &mut R) -> XorConstraint {
    let pool: Vec<VarId> = (0..n_vars).collect();
    random_parity_over(&pool, rng)
}

/// [`random_parity`] restricted to an explicit variable pool. Every
/// (membership, bit) pair is drawn uniformly — including the empty-odd
/// contradiction, whose inclusion keeps the per-assignment survival
/// probability exactly ½ (the affected attempt simply fails and
/// retries).
pub fn random_parity_over<R: Rng>(pool: &[VarId], rng: &mut R) -> XorConstraint {
    let vars: Vec<VarId> = pool.iter().copied().filter(|_| rng.gen::<bool>()).collect();
    let parity_bit = rng.gen::<bool>();
    XorConstraint::new(vars, parity_bit).expect("every parity draw is representable")
}

// ---------------------------------------------------------------------------
// Weight discretization
// ---------------------------------------------------------------------------

/// The augmented problem: bucket selectors and copy bits grafted onto a
/// trajectory encoding so that a trajectory of weight `w` stands behind
/// `copies[bucket(w)]` satisfying assignments.
#[derive(Debug, Clone)]
struct Discretization {
    /// Variable count including selectors and copy bits.
    n_total: usize,
    /// Added rows: bucket membership, selector one-hot, copy-counter
    /// bounds.
    rows: Vec<LinearConstraint>,
    /// Variables random parities range over: trajectory variables plus
    /// copy bits.
    pool: Vec<VarId>,
    /// Assignment multiplicity per bucket, heaviest bucket first.
    copies: Vec<u64>,
    /// Bucket selector variables (empty when one bucket suffices).
    selectors: Vec<VarId>,
    /// Real-valued per-variable energy contributions over the encoding's
    /// variables; the energy of an assignment is the sum over its active
    /// variables.
    coefs: Vec<f64>,
    /// log of the acceptance normalizer: chosen so the bucket-aware
    /// acceptance probability never exceeds 1.
    ln_accept: f64,
}

impl Discretization {
    /// Bucket index encoded in an augmented assignment.
    fn bucket_of(&self, x: &[bool]) -> usize {
        if self.selectors.is_empty() {
            return 0;
        }
        self.selectors
            .iter()
            .position(|&z| x[z])
            .expect("satisfying assignment selects a bucket")
    }

    /// Trajectory energy θᵀf(τ) read off an assignment.
    fn energy_of(&self, x: &[bool]) -> f64 {
        self.coefs
            .iter()
            .zip(x)
            .filter(|(_, &on)| on)
            .map(|(c, _)| c)
            .sum()
    }

    /// log of the acceptance probability for an extracted assignment:
    /// `ln A − E(x) − ln copies[bucket(x)]`. Accepting with this
    /// probability makes the emitted distribution proportional to
    /// `exp(−E)` exactly, with the bucket structure only affecting the
    /// acceptance *rate*.
    fn ln_acceptance(&self, x: &[bool]) -> f64 {
        self.ln_accept - self.energy_of(x) - (self.copies[self.bucket_of(x)] as f64).ln()
    }
}

/// Safe bounds on the trajectory energy: per-step extremes times the
/// discounted step count. Used only to place the buckets; correctness
/// does not depend on tightness.
/// Exact energy extrema over all dynamics-consistent start→goal paths,
/// found by min/max dynamic programming over the encoding's structure.
/// The discretization only needs a range that covers every encodable
/// trajectory; a tight one keeps the bucket count low and the
/// acceptance rate high.
fn energy_range(ctx: &SamplerContext, coefs: &[f64]) -> (f64, f64) {
    let mdp = ctx.mdp;
    let (Some(goal), Some(start)) = (mdp.goal(), mdp.point_start()) else {
        return (0.0, 0.0);
    };
    match ctx.enc.horizon() {
        Some(h) => {
            // layered DP; arrival at the goal ends energy accumulation
            let n = mdp.n_states();
            let mut lo = vec![f64::INFINITY; n];
            let mut hi = vec![f64::NEG_INFINITY; n];
            lo[goal] = 0.0;
            hi[goal] = 0.0;
            for t in (0..h).rev() {
                let mut lo_t = vec![f64::INFINITY; n];
                let mut hi_t = vec![f64::NEG_INFINITY; n];
                lo_t[goal] = 0.0;
                hi_t[goal] = 0.0;
                for s in 0..n {
                    if s == goal {
                        continue;
                    }
                    for a in mdp.available_actions(s) {
                        let (Some(v), Some(s2)) =
                            (ctx.enc.step_var(s, a, t), mdp.deterministic_successor(s, a))
                        else {
                            continue;
                        };
                        if lo[s2].is_finite() {
                            lo_t[s] = lo_t[s].min(coefs[v] + lo[s2]);
                            hi_t[s] = hi_t[s].max(coefs[v] + hi[s2]);
                        }
                    }
                }
                lo = lo_t;
                hi = hi_t;
            }
            if lo[start].is_finite() {
                (lo[start], hi[start])
            } else {
                (0.0, 0.0)
            }
        }
        None => {
            // acyclic flow graph: memoized min/max path energy to goal
            fn walk(
                s: usize,
                goal: usize,
                ctx: &SamplerContext,
                coefs: &[f64],
                memo: &mut Vec<Option<(f64, f64)>>,
            ) -> (f64, f64) {
                if s == goal {
                    return (0.0, 0.0);
                }
                if let Some(v) = memo[s] {
                    return v;
                }
                let mut best = (f64::INFINITY, f64::NEG_INFINITY);
                for a in ctx.mdp.available_actions(s) {
                    let (Some(v), Some(s2)) =
                        (ctx.enc.edge_var(s, a), ctx.mdp.deterministic_successor(s, a))
                    else {
                        continue;
                    };
                    let (lo2, hi2) = walk(s2, goal, ctx, coefs, memo);
                    if lo2.is_finite() {
                        best.0 = best.0.min(coefs[v] + lo2);
                        best.1 = best.1.max(coefs[v] + hi2);
                    }
                }
                memo[s] = Some(best);
                best
            }
            let mut memo = vec![None; mdp.n_states()];
            let got = walk(start, goal, ctx, coefs, &mut memo);
            if got.0.is_finite() {
                got
            } else {
                (0.0, 0.0)
            }
        }
    }
}

/// Builds the bucket apparatus for the given parameters.
fn discretize(
    params: &ModelParams,
    ctx: &SamplerContext,
    cfg: &SamplerConfig,
) -> Result<Discretization> {
    let enc = ctx.enc;
    let coefs = enc.energy_coefficients(params, ctx.fmap, ctx.mdp)?;
    let (e_lo, e_hi) = energy_range(ctx, &coefs);
    let ln_rho = cfg.bucket_ratio.ln();
    let n_buckets = if e_hi - e_lo <= 1e-12 {
        1
    } else {
        (((e_hi - e_lo) / ln_rho).ceil() as usize).clamp(1, cfg.max_buckets)
    };

    let mut pool = enc.trajectory_vars();
    if n_buckets == 1 {
        // every trajectory in one bucket: no selectors, no copies, and
        // acceptance exp(e_lo − E(x)) ≤ 1
        return Ok(Discretization {
            n_total: enc.n_vars(),
            rows: Vec::new(),
            pool,
            copies: vec![1],
            selectors: Vec::new(),
            coefs,
            ln_accept: e_lo,
        });
    }

    // integer-scaled energies for the membership rows
    let c_max = coefs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let scale = if c_max == 0.0 {
        1.0
    } else {
        (2f64.powi(40) / c_max).min(2f64.powi(20))
    };
    let chat: Vec<i64> = coefs.iter().map(|c| (c * scale).round() as i64).collect();
    let nnz = chat.iter().filter(|c| **c != 0).count();
    let e_terms: Vec<(i64, VarId)> = chat
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0)
        .map(|(v, c)| (*c, v))
        .collect();
    let b_lo = (e_lo * scale).floor() as i64 - 1;
    let width = ((ln_rho * scale).ceil() as i64).max(1);
    let boundary = |i: usize| b_lo + i as i64 * width;
    let ehat_lo: i64 = chat.iter().map(|c| 0.min(*c)).sum();
    let ehat_hi: i64 = chat.iter().map(|c| 0.max(*c)).sum();

    // copy counts, heaviest (lowest-energy) bucket first
    let copies: Vec<u64> = (0..n_buckets)
        .map(|i| {
            let c = cfg.bucket_ratio.powi((n_buckets - 1 - i) as i32).round();
            (c as u64).clamp(1, 1 << 40)
        })
        .collect();
    let copy_span = copies[0];
    let n_copy_bits = if copy_span <= 1 {
        0
    } else {
        64 - (copy_span - 1).leading_zeros() as usize
    };

    let selectors: Vec<VarId> = (0..n_buckets).map(|i| enc.n_vars() + i).collect();
    let copy_bits: Vec<VarId> = (0..n_copy_bits)
        .map(|j| enc.n_vars() + n_buckets + j)
        .collect();
    let n_total = enc.n_vars() + n_buckets + n_copy_bits;

    let mut rows = Vec::new();
    // exactly one bucket is selected
    rows.push(LinearConstraint::eq(
        selectors.iter().map(|&z| (1, z)).collect(),
        1,
    ));
    for i in 0..n_buckets {
        let z = selectors[i];
        if i >= 1 {
            // z_i → Ê(x) ≥ boundary(i), vacuous when z_i = 0
            let big_m = (boundary(i) - ehat_lo).max(1);
            let mut terms = e_terms.clone();
            terms.push((-big_m, z));
            rows.push(LinearConstraint::ge(terms, boundary(i) - big_m));
        }
        if i + 1 < n_buckets {
            // z_i → Ê(x) ≤ boundary(i+1) − 1, vacuous when z_i = 0
            let upper = boundary(i + 1) - 1;
            let big_m = (ehat_hi - upper).max(1);
            let mut terms: Vec<(i64, VarId)> =
                e_terms.iter().map(|&(c, v)| (-c, v)).collect();
            terms.push((-big_m, z));
            rows.push(LinearConstraint::ge(terms, -upper - big_m));
        }
        // z_i → copy counter < copies[i]
        if n_copy_bits > 0 && copies[i] < (1u64 << n_copy_bits) {
            let big_m = (1i64 << n_copy_bits) - copies[i] as i64;
            let mut terms: Vec<(i64, VarId)> = copy_bits
                .iter()
                .enumerate()
                .map(|(j, &k)| (-(1i64 << j), k))
                .collect();
            terms.push((-big_m, z));
            rows.push(LinearConstraint::ge(terms, -(copies[i] as i64 - 1) - big_m));
        }
    }

    pool.extend_from_slice(&copy_bits);

    // Acceptance normalizer: A = min over buckets of copies[i] / w̄_i,
    // where w̄_i bounds the weight of anything the rows can place in
    // bucket i (including integer-rounding slop), so A·w/copies ≤ 1.
    let slop = 0.5 * nnz as f64 / scale;
    let ln_accept = (0..n_buckets)
        .map(|i| {
            let e_floor = boundary(i) as f64 / scale - slop;
            (copies[i] as f64).ln() + e_floor
        })
        .fold(f64::INFINITY, f64::min);

    Ok(Discretization {
        n_total,
        rows,
        pool,
        copies,
        selectors,
        coefs,
        ln_accept,
    })
}

// ---------------------------------------------------------------------------
// Parity-count search
// ---------------------------------------------------------------------------

enum ProbeResult {
    /// The hashed cell is empty.
    Empty,
    /// Exactly one survivor, returned.
    Small(Vec<bool>),
    /// At least two survivors.
    Big,
    /// The solver gave up within its budget.
    Timeout,
}

/// Blocks one assignment, projected onto the parity pool (which
/// identifies a solution uniquely: everything else is derived).
fn block_row(x: &[bool], pool: &[VarId]) -> LinearConstraint {
    let mut ones = 0i64;
    let terms = pool
        .iter()
        .map(|&v| {
            if x[v] {
                ones += 1;
                (-1, v)
            } else {
                (1, v)
            }
        })
        .collect();
    LinearConstraint::ge(terms, 1 - ones)
}

/// Adds `count` fresh parities, solves, and if satisfiable asks whether
/// the survivor is unique by blocking it and solving once more.
fn probe<R: Rng>(
    base: &mut OracleProblem,
    pool: &[VarId],
    count: usize,
    rng: &mut R,
    solver: &SolverConfig,
    stats: &OracleStats,
) -> ProbeResult {
    let parity_mark = base.parity.len();
    for _ in 0..count {
        base.parity.push(random_parity_over(pool, rng));
    }
    let first = oracle::solve(base, rng.gen(), solver, stats);
    let result = match first {
        SolveOutcome::Timeout => ProbeResult::Timeout,
        SolveOutcome::Unsat => ProbeResult::Empty,
        SolveOutcome::Sat(x) => {
            base.linear.push(block_row(&x, pool));
            let second = oracle::solve(base, rng.gen(), solver, stats);
            base.linear.pop();
            match second {
                SolveOutcome::Timeout => ProbeResult::Timeout,
                SolveOutcome::Unsat => ProbeResult::Small(x),
                SolveOutcome::Sat(_) => ProbeResult::Big,
            }
        }
    };
    base.parity.truncate(parity_mark);
    result
}

enum SearchOutcome {
    /// A singleton cell at the returned parity count.
    Found { x: Vec<bool>, parity_count: usize },
    /// The base problem itself is unsatisfiable (no parities in force) —
    /// a certainty, not a sampling failure.
    InfeasibleBase,
    /// No singleton regime found within the probe budget.
    Failed { last_count: usize },
}

/// Doubling-then-bisection search for a parity count whose hashed cell
/// has a single survivor. The probes are random, so the SAT/UNSAT
/// frontier is only statistically monotone; when the bracketing window
/// collapses without a singleton, the attempt fails and the caller
/// retries with fresh randomness.
fn search_small_cell<R: Rng>(
    base: &mut OracleProblem,
    pool: &[VarId],
    start_count: usize,
    rng: &mut R,
    solver: &SolverConfig,
    stats: &OracleStats,
) -> SearchOutcome {
    let max_count = pool.len();
    let budget = SEARCH_PROBE_FACTOR * ((max_count.max(2) as f64).log2().ceil() as usize + 2);
    let mut count = start_count.min(max_count);
    let mut biggest_sat: Option<usize> = None; // largest count seen Big
    let mut smallest_empty: Option<usize> = None; // smallest count seen Empty
    let mut step = 1usize;
    for _ in 0..budget {
        match probe(base, pool, count, rng, solver, stats) {
            ProbeResult::Small(x) => return SearchOutcome::Found { x, parity_count: count },
            ProbeResult::Timeout => return SearchOutcome::Failed { last_count: count },
            ProbeResult::Big => {
                if smallest_empty.is_some_and(|h| h <= count + 1) {
                    return SearchOutcome::Failed { last_count: count };
                }
                biggest_sat = Some(biggest_sat.map_or(count, |l| l.max(count)));
                count = match smallest_empty {
                    Some(h) => (count + h) / 2,
                    None => {
                        let next = (count + step).min(max_count);
                        if next == count {
                            return SearchOutcome::Failed { last_count: count };
                        }
                        step *= 2;
                        next
                    }
                };
            }
            ProbeResult::Empty => {
                if count == 0 {
                    return SearchOutcome::InfeasibleBase;
                }
                if biggest_sat.is_some_and(|l| l + 1 >= count) {
                    return SearchOutcome::Failed { last_count: count };
                }
                smallest_empty = Some(smallest_empty.map_or(count, |h| h.min(count)));
                count = match biggest_sat {
                    Some(l) => (l + count) / 2,
                    None => {
                        let next = count.saturating_sub(step);
                        step *= 2;
                        next
                    }
                };
            }
        }
    }
    SearchOutcome::Failed { last_count: count }
}

/// Initial parity count: log₂ of an over-estimate of the augmented
/// space size (trajectory count bound times the largest copy count).
fn parity_hint(ctx: &SamplerContext, disc: &Discretization) -> usize {
    let bits = ctx.enc.log2_count_hint(ctx.mdp) + (disc.copies[0] as f64).log2();
    (bits.ceil().max(0.0) as usize).min(disc.pool.len())
}

/// Derives an independent stream seed from a master seed and a stream
/// index (splitmix-style finalizer).
pub(crate) fn mix64(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn attempt_rng(master_seed: u64, attempt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(master_seed, attempt))
}

fn assemble_base(ctx: &SamplerContext, disc: &Discretization) -> Result<OracleProblem> {
    let mut rows = ctx.rows.to_vec();
    rows.extend(disc.rows.iter().cloned());
    OracleProblem::new(disc.n_total, rows, Vec::new())
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Draws one trajectory approximately distributed as
/// `∝ exp(−θᵀf(τ))` over the constraint-satisfying space.
///
/// Runs up to `cfg.repeats` independent attempts, each deriving its own
/// randomness from `(master_seed, attempt index)`. Each attempt searches
/// for a singleton hashed cell, then applies the bucket-aware acceptance
/// step. Returns `Error::Infeasible` if the constraint system itself has
/// no solutions; solver timeouts and collapsed searches only fail the
/// attempt.
pub fn sample(
    params: &ModelParams,
    ctx: &SamplerContext,
    cfg: &SamplerConfig,
    master_seed: u64,
    stats: &OracleStats,
) -> Result<SampleOutcome> {
    cfg.validate()?;
    let disc = discretize(params, ctx, cfg)?;
    let mut base = assemble_base(ctx, &disc)?;
    let hint = parity_hint(ctx, &disc);
    let queries_before = stats.queries();
    let mut last_count = hint;
    for attempt in 0..cfg.repeats {
        let mut rng = attempt_rng(master_seed, attempt as u64);
        match search_small_cell(&mut base, &disc.pool, hint, &mut rng, ctx.solver, stats) {
            SearchOutcome::InfeasibleBase => return Err(Error::Infeasible),
            SearchOutcome::Failed { last_count: c } => last_count = c,
            SearchOutcome::Found { x, parity_count } => {
                last_count = parity_count;
                if rng.gen::<f64>().ln() < disc.ln_acceptance(&x) {
                    let traj = decode(&x[..ctx.enc.n_vars()], ctx.enc, ctx.mdp)?;
                    return Ok(SampleOutcome {
                        result: SampleResult::Success(traj),
                        parity_count_used: parity_count,
                        oracle_queries_used: stats.queries() - queries_before,
                    });
                }
            }
        }
    }
    Ok(SampleOutcome {
        result: SampleResult::Failure,
        parity_count_used: last_count,
        oracle_queries_used: stats.queries() - queries_before,
    })
}

/// Draws `count` trajectories, retrying failed attempts.
///
/// The first success pays for a full parity-count search; the discovered
/// count is then frozen, and every later attempt draws fresh parities at
/// that count and spends exactly one oracle query. Attempt `i` derives
/// its randomness from `(master_seed, i)`, so the batch is reproducible
/// and independent of scheduling.
pub fn batch_sample(
    count: usize,
    params: &ModelParams,
    ctx: &SamplerContext,
    cfg: &SamplerConfig,
    master_seed: u64,
    stats: &OracleStats,
) -> Result<BatchReport> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::Input("batch size must be at least 1".into()));
    }
    let disc = discretize(params, ctx, cfg)?;
    let mut base = assemble_base(ctx, &disc)?;
    let hint = parity_hint(ctx, &disc);
    let queries_before = stats.queries();

    let mut trajectories = Vec::with_capacity(count);
    let mut frozen: Option<usize> = None;
    let mut attempts = 0u64;
    let mut attempts_to_first = 0u64;
    let mut failures = 0u64;
    let mut consecutive = 0usize;
    let mut first_sample_queries = 0u64;

    while trajectories.len() < count {
        let mut rng = attempt_rng(master_seed, attempts);
        attempts += 1;
        let found: Option<(Vec<bool>, usize)> = match frozen {
            None => {
                match search_small_cell(&mut base, &disc.pool, hint, &mut rng, ctx.solver, stats)
                {
                    SearchOutcome::InfeasibleBase => return Err(Error::Infeasible),
                    SearchOutcome::Failed { .. } => None,
                    SearchOutcome::Found { x, parity_count } => Some((x, parity_count)),
                }
            }
            Some(fixed) => {
                let mark = base.parity.len();
                for _ in 0..fixed {
                    base.parity.push(random_parity_over(&disc.pool, &mut rng));
                }
                let outcome = oracle::solve(&base, rng.gen(), ctx.solver, stats);
                base.parity.truncate(mark);
                match outcome {
                    SolveOutcome::Sat(x) => Some((x, fixed)),
                    SolveOutcome::Unsat | SolveOutcome::Timeout => None,
                }
            }
        };
        let accepted = match found {
            Some((x, parity_count)) if rng.gen::<f64>().ln() < disc.ln_acceptance(&x) => {
                Some((x, parity_count))
            }
            _ => None,
        };
        match accepted {
            Some((x, parity_count)) => {
                let traj = decode(&x[..ctx.enc.n_vars()], ctx.enc, ctx.mdp)?;
                trajectories.push(traj);
                if frozen.is_none() {
                    frozen = Some(parity_count);
                    attempts_to_first = attempts;
                    first_sample_queries = stats.queries() - queries_before;
                }
                consecutive = 0;
            }
            None => {
                failures += 1;
                consecutive += 1;
                if consecutive >= cfg.max_consecutive_failures {
                    return Err(Error::Sampling(format!(
                        "{consecutive} consecutive failed attempts \
                         ({} of {count} trajectories collected)",
                        trajectories.len()
                    )));
                }
            }
        }
    }

    Ok(BatchReport {
        trajectories,
        parity_count: frozen.unwrap_or(0),
        attempts,
        attempts_to_first,
        failures,
        first_sample_queries,
        stats: stats.snapshot(),
    })
}
