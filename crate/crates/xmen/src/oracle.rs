//! A complete satisfiability solver for systems of integer linear
//! (pseudo-boolean) constraints plus parity (XOR) constraints over
//! binary variables.
//!
//! The design is systematic DPLL with chronological backtracking:
//!
//! * linear rows are normalized to Σ aᵢ·ℓᵢ ≥ b with positive integer
//!   coefficients over literals, propagated by slack counting;
//! * the parity system is reduced up front by Gaussian elimination over
//!   GF(2) (toggleable, so tests can confirm elimination loses nothing)
//!   and propagated during search by open-variable counting;
//! * variable and value choices are randomized from a caller-supplied
//!   seed, so repeated solves explore different satisfying assignments;
//! * a decision budget turns pathological searches into a distinct
//!   `Timeout` outcome instead of an unbounded stall.
//!
//! Every `solve` call counts as exactly one oracle query against the
//! caller's [`OracleStats`] accumulator.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{LinearConstraint, Relation, XorConstraint};
use crate::error::{Error, Result};

/// A self-contained solver input.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleProblem {
    pub n_vars: usize,
    pub linear: Vec<LinearConstraint>,
    pub parity: Vec<XorConstraint>,
}

impl OracleProblem {
    pub fn new(
        n_vars: usize,
        linear: Vec<LinearConstraint>,
        parity: Vec<XorConstraint>,
    ) -> Result<Self> {
        let linear_ok = linear
            .iter()
            .all(|row| row.terms.iter().all(|&(_, v)| v < n_vars));
        let parity_ok = parity.iter().all(|row| row.vars.iter().all(|&v| v < n_vars));
        if !linear_ok || !parity_ok {
            return Err(Error::Encoding(format!(
                "constraint references a variable id ≥ n_vars = {n_vars}"
            )));
        }
        Ok(Self { n_vars, linear, parity })
    }

    /// Checks an assignment against every constraint.
    pub fn verify(&self, assignment: &[bool]) -> bool {
        assignment.len() == self.n_vars
            && self.linear.iter().all(|row| row.eval(assignment))
            && self.parity.iter().all(|row| row.eval(assignment))
    }
}

/// Shared query/work accounting with atomic-increment semantics, so
/// concurrent solver instances can aggregate into one owner-provided
/// accumulator.
#[derive(Debug, Default)]
pub struct OracleStats {
    queries: AtomicU64,
    decisions: AtomicU64,
    propagations: AtomicU64,
}

impl OracleStats {
    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn decisions(&self) -> u64 {
        self.decisions.load(Ordering::Relaxed)
    }

    pub fn propagations(&self) -> u64 {
        self.propagations.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> OracleStatsSnapshot {
        OracleStatsSnapshot {
            queries: self.queries(),
            decisions: self.decisions(),
            propagations: self.propagations(),
        }
    }

    fn bump_query(&self) {
        self.queries.fetch_add(1, Ordering::Relaxed);
    }

    fn add_work(&self, decisions: u64, propagations: u64) {
        self.decisions.fetch_add(decisions, Ordering::Relaxed);
        self.propagations.fetch_add(propagations, Ordering::Relaxed);
    }
}

/// Plain-data copy of the counters, for logging and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OracleStatsSnapshot {
    pub queries: u64,
    pub decisions: u64,
    pub propagations: u64,
}

/// Per-solve resource limits and feature toggles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Search decisions permitted before giving up with `Timeout`.
    pub decision_budget: u64,
    /// Reduce the parity system by GF(2) elimination before search.
    /// On by default; exposed so tests can compare both modes.
    pub pre_eliminate: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { decision_budget: 5_000_000, pre_eliminate: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveOutcome {
    Sat(Vec<bool>),
    Unsat,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountOutcome {
    Exact(u64),
    ExceedsCap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnumerateOutcome {
    Assignments(Vec<Vec<bool>>),
    ExceedsCap,
}

/// Returns one satisfying assignment, `Unsat`, or `Timeout`. Complete:
/// whenever a satisfying assignment exists and the budget suffices, one
/// is found. Identical `(problem, seed)` pairs yield identical results.
pub fn solve(
    problem: &OracleProblem,
    seed: u64,
    cfg: &SolverConfig,
    stats: &OracleStats,
) -> SolveOutcome {
    stats.bump_query();
    let mut solver = match Solver::init(problem, cfg.pre_eliminate, Some(seed)) {
        Ok(s) => s,
        Err(InitConflict) => return SolveOutcome::Unsat,
    };
    let out = solver.search_one(cfg.decision_budget);
    stats.add_work(solver.decisions, solver.propagations);
    match out {
        SearchResult::Sat => {
            let assignment = solver.complete_assignment();
            debug_assert!(problem.verify(&assignment));
            SolveOutcome::Sat(assignment)
        }
        SearchResult::Unsat => SolveOutcome::Unsat,
        SearchResult::Budget => SolveOutcome::Timeout,
    }
}

/// Exact model count when it does not exceed `cap`; `ExceedsCap` when
/// it does, or when the search effort grows past a generous multiple of
/// the cap (the cap bounds effort, not only the reported number).
pub fn solve_all_count(problem: &OracleProblem, cap: u64, stats: &OracleStats) -> CountOutcome {
    solve_all_count_opts(problem, cap, true, stats)
}

/// [`solve_all_count`] with the parity pre-elimination toggle exposed,
/// so equivalence of the two parity-reasoning modes stays testable.
pub fn solve_all_count_opts(
    problem: &OracleProblem,
    cap: u64,
    pre_eliminate: bool,
    stats: &OracleStats,
) -> CountOutcome {
    let mut count = 0u64;
    let complete = visit_all(problem, cap, pre_eliminate, stats, &mut |free_vars, _| {
        let add = 1u64.checked_shl(free_vars as u32).unwrap_or(u64::MAX);
        count = count.saturating_add(add);
        count <= cap
    });
    if complete && count <= cap {
        CountOutcome::Exact(count)
    } else {
        CountOutcome::ExceedsCap
    }
}

/// Materializes every satisfying assignment (test-scale helper).
pub fn enumerate_assignments(
    problem: &OracleProblem,
    cap: u64,
    stats: &OracleStats,
) -> EnumerateOutcome {
    let mut out: Vec<Vec<bool>> = Vec::new();
    let complete = visit_all(problem, cap, true, stats, &mut |free_vars, solver| {
        let free: Vec<usize> = (0..solver.n)
            .filter(|&v| solver.val[v] == UNASSIGNED)
            .collect();
        debug_assert_eq!(free.len(), free_vars);
        if free.len() >= 63 {
            return false;
        }
        for combo in 0u64..(1 << free.len()) {
            if out.len() as u64 >= cap {
                return false;
            }
            let mut x: Vec<bool> = (0..solver.n).map(|v| solver.val[v] == TRUE).collect();
            for (bit, &v) in free.iter().enumerate() {
                x[v] = combo >> bit & 1 == 1;
            }
            debug_assert!(problem.verify(&x));
            out.push(x);
        }
        true
    });
    if complete {
        EnumerateOutcome::Assignments(out)
    } else {
        EnumerateOutcome::ExceedsCap
    }
}

/// Shared exhaustive DFS: calls the visitor at every solution leaf with
/// the number of free (unconstrained) variables; the visitor returns
/// `false` to abort. Returns whether the traversal completed.
fn visit_all(
    problem: &OracleProblem,
    cap: u64,
    pre_eliminate: bool,
    stats: &OracleStats,
    visitor: &mut dyn FnMut(usize, &Solver) -> bool,
) -> bool {
    let mut solver = match Solver::init(problem, pre_eliminate, None) {
        Ok(s) => s,
        Err(InitConflict) => return true, // zero solutions, traversal trivially complete
    };
    let decision_budget = cap.saturating_mul(1024).saturating_add(1_000_000);
    let complete = solver.search_all(decision_budget, visitor);
    stats.add_work(solver.decisions, solver.propagations);
    complete
}

/// Parses the plain-text constraint dump format: `±c·x_i … ⋈ b` per
/// linear row, `x x_i x_j … = bit` per parity row, `*`-prefixed
/// comments (a `* vars: n` header pins the variable count).
pub fn parse_dump(text: &str) -> Result<OracleProblem> {
    let mut linear = Vec::new();
    let mut parity = Vec::new();
    let mut n_vars: Option<usize> = None;
    let bad = |line: &str, why: &str| Error::Input(format!("bad constraint line {line:?}: {why}"));
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('*') {
            if let Some(rest) = comment.trim().strip_prefix("vars:") {
                n_vars = Some(
                    rest.trim()
                        .parse()
                        .map_err(|_| bad(line, "unreadable vars header"))?,
                );
            }
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens[0] == "x" {
            // parity row: x x_i x_j … = bit
            let eq = tokens.len().checked_sub(2).ok_or_else(|| bad(line, "truncated"))?;
            if tokens[eq] != "=" {
                return Err(bad(line, "parity rows must end with `= bit`"));
            }
            let bit = match tokens[eq + 1] {
                "0" => false,
                "1" => true,
                other => return Err(bad(line, &format!("parity bit {other:?}"))),
            };
            let mut vars = Vec::new();
            for tok in &tokens[1..eq] {
                vars.push(parse_var(tok).ok_or_else(|| bad(line, "unreadable variable"))?);
            }
            parity.push(XorConstraint::new(vars, bit)?);
            continue;
        }
        // linear row: terms, relation, bound
        let (rel_pos, relation) = tokens
            .iter()
            .enumerate()
            .find_map(|(i, t)| match *t {
                "<=" => Some((i, Relation::Le)),
                "=" => Some((i, Relation::Eq)),
                ">=" => Some((i, Relation::Ge)),
                _ => None,
            })
            .ok_or_else(|| bad(line, "missing relation"))?;
        if rel_pos + 2 != tokens.len() {
            return Err(bad(line, "expected a single bound after the relation"));
        }
        let bound: i64 = tokens[rel_pos + 1]
            .parse()
            .map_err(|_| bad(line, "unreadable bound"))?;
        let mut terms = Vec::new();
        for tok in &tokens[..rel_pos] {
            let (coef_str, var_str) = tok
                .split_once('·')
                .ok_or_else(|| bad(line, "terms look like ±c·x_i"))?;
            let coef: i64 = coef_str
                .parse()
                .map_err(|_| bad(line, "unreadable coefficient"))?;
            let var = parse_var(var_str).ok_or_else(|| bad(line, "unreadable variable"))?;
            terms.push((coef, var));
        }
        linear.push(LinearConstraint { terms, relation, bound });
    }
    let max_ref = linear
        .iter()
        .flat_map(|r| r.terms.iter().map(|&(_, v)| v + 1))
        .chain(parity.iter().flat_map(|r| r.vars.iter().map(|&v| v + 1)))
        .max()
        .unwrap_or(0);
    OracleProblem::new(n_vars.unwrap_or(max_ref).max(max_ref), linear, parity)
}

fn parse_var(tok: &str) -> Option<usize> {
    tok.strip_prefix('x')?.parse().ok()
}

// ---------------------------------------------------------------------------
// Solver internals
// ---------------------------------------------------------------------------

const FALSE: u8 = 0;
const TRUE: u8 = 1;
const UNASSIGNED: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Lit {
    var: usize,
    neg: bool,
}

impl Lit {
    fn value(self, assigned: bool) -> bool {
        assigned != self.neg
    }
}

/// Normalized row Σ aᵢ·ℓᵢ ≥ bound with aᵢ > 0, terms sorted by
/// descending coefficient so propagation scans can stop early.
struct NormRow {
    terms: Vec<(i64, Lit)>,
    bound: i64,
}

struct Level {
    var: usize,
    first_val: bool,
    flipped: bool,
    trail_mark: usize,
}

struct InitConflict;

struct Solver {
    n: usize,
    rows: Vec<NormRow>,
    potential: Vec<i64>,
    satsum: Vec<i64>,
    occ: Vec<Vec<(u32, u32)>>,
    // parity rows after optional elimination
    xvars: Vec<Vec<usize>>,
    xacc: Vec<bool>,
    xopen: Vec<usize>,
    xocc: Vec<Vec<u32>>,
    val: Vec<u8>,
    trail: Vec<usize>,
    levels: Vec<Level>,
    queue: VecDeque<(usize, bool)>,
    unsat_linear: usize,
    open_parity: usize,
    n_unassigned: usize,
    decisions: u64,
    propagations: u64,
    rng: Option<ChaCha8Rng>,
}

enum SearchResult {
    Sat,
    Unsat,
    Budget,
}

impl Solver {
    fn init(problem: &OracleProblem, pre_eliminate: bool, seed: Option<u64>) -> std::result::Result<Self, InitConflict> {
        let n = problem.n_vars;
        // -- linear normalization --
        let mut rows: Vec<NormRow> = Vec::new();
        for c in &problem.linear {
            match c.relation {
                Relation::Ge => rows.push(normalize_ge(&c.terms, c.bound)),
                Relation::Le => {
                    let negated: Vec<(i64, usize)> =
                        c.terms.iter().map(|&(a, v)| (-a, v)).collect();
                    rows.push(normalize_ge(&negated, -c.bound));
                }
                Relation::Eq => {
                    rows.push(normalize_ge(&c.terms, c.bound));
                    let negated: Vec<(i64, usize)> =
                        c.terms.iter().map(|&(a, v)| (-a, v)).collect();
                    rows.push(normalize_ge(&negated, -c.bound));
                }
            }
        }
        rows.retain(|r| r.bound > 0); // rows with bound ≤ 0 hold vacuously
        let mut potential = Vec::with_capacity(rows.len());
        let mut occ: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
        for (ri, row) in rows.iter().enumerate() {
            let p: i64 = row.terms.iter().map(|&(a, _)| a).sum();
            if p < row.bound {
                return Err(InitConflict);
            }
            potential.push(p);
            for (ti, &(_, lit)) in row.terms.iter().enumerate() {
                occ[lit.var].push((ri as u32, ti as u32));
            }
        }
        let satsum = vec![0i64; rows.len()];
        let unsat_linear = rows.len(); // every kept row has bound > 0

        // -- parity system --
        let raw: Vec<(Vec<usize>, bool)> = problem
            .parity
            .iter()
            .map(|x| (dedupe_xor(&x.vars), x.parity_bit))
            .collect();
        let reduced = if pre_eliminate {
            match gf2_eliminate(n, &raw) {
                Some(r) => r,
                None => return Err(InitConflict),
            }
        } else {
            raw
        };
        let mut xvars = Vec::new();
        let mut xacc = Vec::new();
        let mut xopen = Vec::new();
        let mut xocc: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut forced: Vec<(usize, bool)> = Vec::new();
        for (vars, rhs) in reduced {
            if vars.is_empty() {
                if rhs {
                    return Err(InitConflict);
                }
                continue;
            }
            if vars.len() == 1 {
                forced.push((vars[0], rhs));
                continue;
            }
            let xi = xvars.len() as u32;
            for &v in &vars {
                xocc[v].push(xi);
            }
            xopen.push(vars.len());
            xacc.push(rhs);
            xvars.push(vars);
        }
        let open_parity = xvars.len();

        let mut solver = Solver {
            n,
            rows,
            potential,
            satsum,
            occ,
            xvars,
            xacc,
            xopen,
            xocc,
            val: vec![UNASSIGNED; n],
            trail: Vec::new(),
            levels: Vec::new(),
            queue: VecDeque::new(),
            unsat_linear,
            open_parity,
            n_unassigned: n,
            decisions: 0,
            propagations: 0,
            rng: seed.map(ChaCha8Rng::seed_from_u64),
        };
        // root implications visible before any assignment
        for (v, b) in forced {
            solver.queue.push_back((v, b));
        }
        for ri in 0..solver.rows.len() {
            solver.scan_row_for_forced(ri);
        }
        Ok(solver)
    }

    /// Enqueues literals a row forces given its current slack.
    fn scan_row_for_forced(&mut self, ri: usize) {
        let slack = self.potential[ri] - self.rows[ri].bound;
        // sorted descending: once a coefficient fits in the slack, all
        // later ones do too
        for ti in 0..self.rows[ri].terms.len() {
            let (a, lit) = self.rows[ri].terms[ti];
            if a <= slack {
                break;
            }
            if self.val[lit.var] == UNASSIGNED {
                self.queue.push_back((lit.var, !lit.neg));
            }
        }
    }

    /// Applies one assignment; returns false on an immediate conflict.
    fn apply(&mut self, var: usize, value: bool) -> bool {
        self.val[var] = u8::from(value);
        self.trail.push(var);
        self.n_unassigned -= 1;
        let mut ok = true;
        for idx in 0..self.occ[var].len() {
            let (ri, ti) = self.occ[var][idx];
            let (ri, ti) = (ri as usize, ti as usize);
            let (a, lit) = self.rows[ri].terms[ti];
            if lit.value(value) {
                let before = self.satsum[ri];
                self.satsum[ri] += a;
                if before < self.rows[ri].bound && self.satsum[ri] >= self.rows[ri].bound {
                    self.unsat_linear -= 1;
                }
            } else {
                self.potential[ri] -= a;
                if self.potential[ri] < self.rows[ri].bound {
                    ok = false; // keep structures consistent; caller unwinds
                } else if self.satsum[ri] < self.rows[ri].bound {
                    self.scan_row_for_forced(ri);
                }
            }
        }
        for idx in 0..self.xocc[var].len() {
            let xi = self.xocc[var][idx] as usize;
            self.xopen[xi] -= 1;
            if value {
                self.xacc[xi] = !self.xacc[xi];
            }
            match self.xopen[xi] {
                0 => {
                    self.open_parity -= 1;
                    if self.xacc[xi] {
                        ok = false;
                    }
                }
                1 => {
                    if let Some(&u) = self.xvars[xi].iter().find(|&&u| self.val[u] == UNASSIGNED) {
                        self.queue.push_back((u, self.xacc[xi]));
                    }
                }
                _ => {}
            }
        }
        ok
    }

    fn unassign(&mut self, var: usize) {
        let was_true = self.val[var] == TRUE;
        self.val[var] = UNASSIGNED;
        self.n_unassigned += 1;
        for idx in 0..self.occ[var].len() {
            let (ri, ti) = self.occ[var][idx];
            let (ri, ti) = (ri as usize, ti as usize);
            let (a, lit) = self.rows[ri].terms[ti];
            if lit.value(was_true) {
                let before = self.satsum[ri];
                self.satsum[ri] -= a;
                if before >= self.rows[ri].bound && self.satsum[ri] < self.rows[ri].bound {
                    self.unsat_linear += 1;
                }
            } else {
                self.potential[ri] += a;
            }
        }
        for idx in 0..self.xocc[var].len() {
            let xi = self.xocc[var][idx] as usize;
            if self.xopen[xi] == 0 {
                self.open_parity += 1;
            }
            self.xopen[xi] += 1;
            if was_true {
                self.xacc[xi] = !self.xacc[xi];
            }
        }
    }

    /// Drains the implication queue; false signals a conflict.
    fn propagate(&mut self) -> bool {
        while let Some((var, value)) = self.queue.pop_front() {
            match self.val[var] {
                UNASSIGNED => {
                    self.propagations += 1;
                    if !self.apply(var, value) {
                        self.queue.clear();
                        return false;
                    }
                }
                v if (v == TRUE) == value => {}
                _ => {
                    self.queue.clear();
                    return false;
                }
            }
        }
        true
    }

    /// Unwinds to the most recent unflipped decision and takes the
    /// other branch; false when the tree is exhausted.
    fn backtrack(&mut self) -> bool {
        self.queue.clear();
        loop {
            let Some(last) = self.levels.last() else { return false };
            let (mark, var, first_val, flipped) =
                (last.trail_mark, last.var, last.first_val, last.flipped);
            while self.trail.len() > mark {
                let v = self.trail.pop().unwrap();
                self.unassign(v);
            }
            if flipped {
                self.levels.pop();
                continue;
            }
            self.levels.last_mut().unwrap().flipped = true;
            self.queue.push_back((var, !first_val));
            return true;
        }
    }

    fn decide(&mut self, var: usize, value: bool) {
        self.levels.push(Level {
            var,
            first_val: value,
            flipped: false,
            trail_mark: self.trail.len(),
        });
        self.queue.push_back((var, value));
        self.decisions += 1;
    }

    fn all_rows_decided(&self) -> bool {
        self.unsat_linear == 0 && self.open_parity == 0
    }

    /// Branching heuristic: satisfy a pending linear row if any (pick a
    /// random unassigned literal of a random unsatisfied row and make it
    /// true), otherwise split a pending parity row on a random variable.
    fn pick_random(&mut self) -> (usize, bool) {
        let rng = self.rng.as_mut().expect("randomized pick requires a seed");
        if self.unsat_linear > 0 {
            let start = rng.gen_range(0..self.rows.len());
            for k in 0..self.rows.len() {
                let ri = (start + k) % self.rows.len();
                if self.satsum[ri] >= self.rows[ri].bound {
                    continue;
                }
                let open: Vec<Lit> = self.rows[ri]
                    .terms
                    .iter()
                    .filter(|&&(_, l)| self.val[l.var] == UNASSIGNED)
                    .map(|&(_, l)| l)
                    .collect();
                let lit = open[rng.gen_range(0..open.len())];
                return (lit.var, !lit.neg);
            }
            unreachable!("unsat_linear counter out of sync");
        }
        debug_assert!(self.open_parity > 0);
        let start = rng.gen_range(0..self.xvars.len());
        for k in 0..self.xvars.len() {
            let xi = (start + k) % self.xvars.len();
            if self.xopen[xi] == 0 {
                continue;
            }
            let open: Vec<usize> = self.xvars[xi]
                .iter()
                .copied()
                .filter(|&v| self.val[v] == UNASSIGNED)
                .collect();
            let var = open[rng.gen_range(0..open.len())];
            let value = rng.gen::<bool>();
            return (var, value);
        }
        unreachable!("open_parity counter out of sync");
    }

    /// Deterministic branching used by the exhaustive traversals.
    fn pick_fixed(&self) -> (usize, bool) {
        for ri in 0..self.rows.len() {
            if self.satsum[ri] < self.rows[ri].bound {
                for &(_, l) in &self.rows[ri].terms {
                    if self.val[l.var] == UNASSIGNED {
                        return (l.var, false);
                    }
                }
            }
        }
        for xi in 0..self.xvars.len() {
            if self.xopen[xi] > 0 {
                for &v in &self.xvars[xi] {
                    if self.val[v] == UNASSIGNED {
                        return (v, false);
                    }
                }
            }
        }
        unreachable!("pick_fixed called with every row decided");
    }

    fn search_one(&mut self, budget: u64) -> SearchResult {
        loop {
            if !self.propagate() {
                if !self.backtrack() {
                    return SearchResult::Unsat;
                }
                continue;
            }
            if self.all_rows_decided() {
                return SearchResult::Sat;
            }
            if self.decisions >= budget {
                return SearchResult::Budget;
            }
            let (var, value) = self.pick_random();
            self.decide(var, value);
        }
    }

    /// Exhaustive traversal invoking the visitor per solution leaf.
    /// Returns whether the whole tree was covered.
    fn search_all(
        &mut self,
        budget: u64,
        visitor: &mut dyn FnMut(usize, &Solver) -> bool,
    ) -> bool {
        loop {
            if !self.propagate() {
                if !self.backtrack() {
                    return true;
                }
                continue;
            }
            if self.all_rows_decided() {
                if !visitor(self.n_unassigned, self) {
                    return false;
                }
                if !self.backtrack() {
                    return true;
                }
                continue;
            }
            if self.decisions >= budget {
                return false;
            }
            let (var, value) = self.pick_fixed();
            self.decide(var, value);
        }
    }

    /// Fills leftover free variables after a successful search. Free
    /// variables occur in no pending row, so any completion satisfies
    /// the problem; random values add survivor diversity.
    fn complete_assignment(&mut self) -> Vec<bool> {
        let mut rng = self.rng.take().expect("complete_assignment follows a seeded search");
        (0..self.n)
            .map(|v| match self.val[v] {
                TRUE => true,
                FALSE => false,
                _ => rng.gen::<bool>(),
            })
            .collect()
    }
}

/// Merges duplicate variables, drops zero coefficients, and rewrites
/// negative coefficients through literal negation:
/// −a·x = −a + a·(1−x) shifts the bound by −a and adds a·x̄.
fn normalize_ge(terms: &[(i64, usize)], bound: i64) -> NormRow {
    let mut merged: std::collections::BTreeMap<usize, i64> = std::collections::BTreeMap::new();
    for &(a, v) in terms {
        *merged.entry(v).or_insert(0) += a;
    }
    let mut out: Vec<(i64, Lit)> = Vec::new();
    let mut b = bound;
    for (v, a) in merged {
        match a.cmp(&0) {
            std::cmp::Ordering::Greater => out.push((a, Lit { var: v, neg: false })),
            std::cmp::Ordering::Less => {
                out.push((-a, Lit { var: v, neg: true }));
                b -= a; // a < 0, so the bound grows by |a|
            }
            std::cmp::Ordering::Equal => {}
        }
    }
    out.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.var.cmp(&y.1.var)));
    NormRow { terms: out, bound: b }
}

/// XOR-cancels duplicate variables in a parity row.
fn dedupe_xor(vars: &[usize]) -> Vec<usize> {
    let mut sorted = vars.to_vec();
    sorted.sort_unstable();
    let mut out = Vec::with_capacity(sorted.len());
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if (j - i) % 2 == 1 {
            out.push(sorted[i]);
        }
        i = j;
    }
    out
}

/// Reduced row echelon form of the parity system over GF(2). Returns
/// `None` when the system is inconsistent (an empty row with odd
/// parity), otherwise rows with pairwise distinct pivots.
fn gf2_eliminate(n_vars: usize, rows: &[(Vec<usize>, bool)]) -> Option<Vec<(Vec<usize>, bool)>> {
    let blocks = n_vars.div_ceil(64);
    let mut basis: Vec<(Vec<u64>, bool, usize)> = Vec::new(); // (bits, rhs, pivot)
    for (vars, rhs) in rows {
        let mut bits = vec![0u64; blocks];
        for &v in vars {
            bits[v / 64] ^= 1u64 << (v % 64);
        }
        let mut rhs = *rhs;
        for (b_bits, b_rhs, pivot) in &basis {
            if bits[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (x, y) in bits.iter_mut().zip(b_bits) {
                    *x ^= y;
                }
                rhs ^= b_rhs;
            }
        }
        match lowest_bit(&bits) {
            None => {
                if rhs {
                    return None;
                }
            }
            Some(pivot) => basis.push((bits, rhs, pivot)),
        }
    }
    // back-substitution: clear every pivot from the other rows
    for i in 0..basis.len() {
        for j in 0..basis.len() {
            if i == j {
                continue;
            }
            let pivot = basis[i].2;
            if basis[j].0[pivot / 64] >> (pivot % 64) & 1 == 1 {
                let (src, dst) = if i < j {
                    let (a, b) = basis.split_at_mut(j);
                    (&a[i], &mut b[0])
                } else {
                    let (a, b) = basis.split_at_mut(i);
                    (&b[0], &mut a[j])
                };
                for (x, y) in dst.0.iter_mut().zip(&src.0) {
                    *x ^= y;
                }
                dst.1 ^= src.1;
            }
        }
    }
    Some(
        basis
            .into_iter()
            .map(|(bits, rhs, _)| {
                let mut vars = Vec::new();
                for (bi, &word) in bits.iter().enumerate() {
                    let mut w = word;
                    while w != 0 {
                        let tz = w.trailing_zeros() as usize;
                        vars.push(bi * 64 + tz);
                        w &= w - 1;
                    }
                }
                (vars, rhs)
            })
            .collect(),
    )
}

fn lowest_bit(bits: &[u64]) -> Option<usize> {
    for (bi, &word) in bits.iter().enumerate() {
        if word != 0 {
            return Some(bi * 64 + word.trailing_zeros() as usize);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn xor(vars: Vec<usize>, bit: bool) -> XorConstraint {
        XorConstraint::new(vars, bit).unwrap()
    }

    /// Reference semantics: try all 2^n assignments.
    fn brute_force(problem: &OracleProblem) -> Vec<Vec<bool>> {
        assert!(problem.n_vars <= 22);
        let mut out = Vec::new();
        for mask in 0u64..(1 << problem.n_vars) {
            let x: Vec<bool> = (0..problem.n_vars).map(|v| mask >> v & 1 == 1).collect();
            if problem.verify(&x) {
                out.push(x);
            }
        }
        out
    }

    #[test]
    fn contradictory_parities_are_unsat() {
        let p = OracleProblem::new(1, vec![], vec![xor(vec![0], true), xor(vec![0], false)])
            .unwrap();
        let stats = OracleStats::default();
        assert_eq!(solve(&p, 0, &SolverConfig::default(), &stats), SolveOutcome::Unsat);
        assert_eq!(solve_all_count(&p, 10, &stats), CountOutcome::Exact(0));
    }

    #[test]
    fn unconstrained_single_variable_is_sat() {
        let p = OracleProblem::new(1, vec![], vec![]).unwrap();
        let stats = OracleStats::default();
        let SolveOutcome::Sat(x) = solve(&p, 42, &SolverConfig::default(), &stats) else {
            panic!("expected SAT");
        };
        assert_eq!(x.len(), 1);
        assert_eq!(stats.queries(), 1);
    }

    #[test]
    fn tautology_counts_the_full_cube() {
        let p = OracleProblem::new(16, vec![], vec![]).unwrap();
        let stats = OracleStats::default();
        assert_eq!(solve_all_count(&p, 1 << 17, &stats), CountOutcome::Exact(1 << 16));
        assert_eq!(solve_all_count(&p, 100, &stats), CountOutcome::ExceedsCap);
    }

    #[test]
    fn one_parity_halves_the_cube() {
        for k in [1usize, 4, 10] {
            let p = OracleProblem::new(k, vec![], vec![xor((0..k).collect(), true)]).unwrap();
            let stats = OracleStats::default();
            assert_eq!(
                solve_all_count(&p, 1 << 12, &stats),
                CountOutcome::Exact(1u64 << (k - 1)),
                "k = {k}"
            );
        }
    }

    #[test]
    fn budget_exhaustion_reports_timeout() {
        // x0 ⊕ x1 = 0 needs at least one decision
        let p = OracleProblem::new(2, vec![], vec![xor(vec![0, 1], false)]).unwrap();
        let stats = OracleStats::default();
        let cfg = SolverConfig { decision_budget: 0, pre_eliminate: true };
        assert_eq!(solve(&p, 1, &cfg, &stats), SolveOutcome::Timeout);
        assert_eq!(stats.queries(), 1, "a timed-out call still counts as one query");
    }

    #[test]
    fn identical_seed_identical_assignment() {
        let p = OracleProblem::new(
            8,
            vec![LinearConstraint::ge((0..8).map(|v| (1, v)).collect(), 3)],
            vec![xor(vec![0, 2, 4], true)],
        )
        .unwrap();
        let stats = OracleStats::default();
        let a = solve(&p, 1234, &SolverConfig::default(), &stats);
        let b = solve(&p, 1234, &SolverConfig::default(), &stats);
        assert_eq!(a, b);
        assert_eq!(stats.queries(), 2);
    }

    #[test]
    fn different_seeds_reach_different_assignments() {
        // not contractual for any single pair, so check that 20 seeds
        // produce at least two distinct satisfying assignments
        let p = OracleProblem::new(6, vec![], vec![xor(vec![0, 1, 2], true)]).unwrap();
        let stats = OracleStats::default();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..20 {
            if let SolveOutcome::Sat(x) = solve(&p, seed, &SolverConfig::default(), &stats) {
                seen.insert(x);
            }
        }
        assert!(seen.len() > 1);
    }

    #[test]
    fn negative_coefficients_and_equalities() {
        // 2·x0 − 3·x1 = −1 forces (x0, x1) = (1, 1): lhs 2·1 − 3·1 = −1
        let p = OracleProblem::new(
            2,
            vec![LinearConstraint::eq(vec![(2, 0), (-3, 1)], -1)],
            vec![],
        )
        .unwrap();
        let stats = OracleStats::default();
        let SolveOutcome::Sat(x) = solve(&p, 5, &SolverConfig::default(), &stats) else {
            panic!("expected SAT");
        };
        assert_eq!(x, vec![true, true]);
        assert_eq!(solve_all_count(&p, 10, &stats), CountOutcome::Exact(1));
    }

    #[test]
    fn empty_linear_row_is_respected() {
        let p = OracleProblem::new(3, vec![LinearConstraint::unsatisfiable()], vec![]).unwrap();
        let stats = OracleStats::default();
        assert_eq!(solve(&p, 0, &SolverConfig::default(), &stats), SolveOutcome::Unsat);
    }

    #[test]
    fn enumerate_matches_brute_force_on_a_mixed_problem() {
        let p = OracleProblem::new(
            6,
            vec![
                LinearConstraint::ge(vec![(1, 0), (1, 1), (1, 2), (1, 3)], 2),
                LinearConstraint::le(vec![(2, 0), (1, 4), (1, 5)], 2),
            ],
            vec![xor(vec![1, 3, 5], false)],
        )
        .unwrap();
        let stats = OracleStats::default();
        let EnumerateOutcome::Assignments(mut got) = enumerate_assignments(&p, 1 << 10, &stats)
        else {
            panic!("cap");
        };
        got.sort();
        let mut expected = brute_force(&p);
        expected.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn dump_parser_reads_the_documented_format() {
        let text = "\
* vars: 4
+2·x0 -1·x2 >= 1
+1·x1 +1·x3 = 1
x x0 x3 = 1
";
        let p = parse_dump(text).unwrap();
        assert_eq!(p.n_vars, 4);
        assert_eq!(p.linear.len(), 2);
        assert_eq!(p.linear[0].terms, vec![(2, 0), (-1, 2)]);
        assert_eq!(p.linear[0].relation, Relation::Ge);
        assert_eq!(p.parity, vec![xor(vec![0, 3], true)]);
        assert!(parse_dump("+1·x0 nonsense 1").is_err());
        assert!(parse_dump("x x0 = 2").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(96))]

        /// Completeness battery: on random mixed systems over ≤ 9
        /// variables, the solver's verdict, model count, and both
        /// parity modes agree with 2^n brute force.
        #[test]
        fn agrees_with_brute_force(
            n in 1usize..=9,
            rows in prop::collection::vec(
                (
                    prop::collection::vec((-4i64..=4, 0usize..9), 1..=4),
                    0usize..3,
                    -4i64..=6,
                ),
                0..=4,
            ),
            parities in prop::collection::vec(
                (prop::collection::vec(0usize..9, 1..=5), prop::bool::ANY),
                0..=3,
            ),
            seed in prop::num::u64::ANY,
        ) {
            let linear: Vec<LinearConstraint> = rows
                .into_iter()
                .map(|(terms, rel, bound)| {
                    let terms: Vec<(i64, usize)> =
                        terms.into_iter().map(|(c, v)| (c, v % n)).collect();
                    let relation = [Relation::Le, Relation::Eq, Relation::Ge][rel];
                    LinearConstraint { terms, relation, bound }
                })
                .collect();
            let parity: Vec<XorConstraint> = parities
                .into_iter()
                .map(|(vars, bit)| {
                    let vars: Vec<usize> = vars.into_iter().map(|v| v % n).collect();
                    XorConstraint { vars, parity_bit: bit }
                })
                .collect();
            let problem = OracleProblem::new(n, linear, parity).unwrap();
            let expected = brute_force(&problem);

            let stats = OracleStats::default();
            match solve(&problem, seed, &SolverConfig::default(), &stats) {
                SolveOutcome::Sat(x) => {
                    prop_assert!(problem.verify(&x));
                    prop_assert!(!expected.is_empty());
                }
                SolveOutcome::Unsat => prop_assert!(expected.is_empty()),
                SolveOutcome::Timeout => prop_assert!(false, "budget hit on a toy problem"),
            }

            // parity reasoning is exact with and without pre-elimination
            prop_assert_eq!(
                solve_all_count(&problem, 1 << 12, &stats),
                CountOutcome::Exact(expected.len() as u64)
            );
            prop_assert_eq!(
                solve_all_count_opts(&problem, 1 << 12, false, &stats),
                CountOutcome::Exact(expected.len() as u64)
            );
            let no_elim = SolverConfig { pre_eliminate: false, ..Default::default() };
            match solve(&problem, seed, &no_elim, &stats) {
                SolveOutcome::Sat(x) => prop_assert!(problem.verify(&x)),
                SolveOutcome::Unsat => prop_assert!(expected.is_empty()),
                SolveOutcome::Timeout => prop_assert!(false, "budget hit on a toy problem"),
            }
        }
    }
}
