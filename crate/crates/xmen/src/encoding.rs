//! Compilation of an MDP plus a constraint set into binary variables
//! with integer linear (pseudo-boolean) constraints, and decoding of
//! satisfying assignments back into trajectories.
//!
//! Two compilations are provided:
//!
//! * **Flow** — one variable per (state, action) pair; a satisfying
//!   assignment is a unit flow from start to goal. Compact (exactly
//!   |S|·|A| variables) but only sound on acyclic graphs and unable to
//!   express time order.
//! * **TimeIndexed** — one variable per (state, action, layer) plus
//!   per-layer "done" flags; general, and required for order-sensitive
//!   constraints (precedence, action-repetition limits).
//!
//! [`encode`] picks the kind automatically; [`encode_with_kind`] forces
//! one. Auxiliary helper variables introduced while compiling
//! constraints are tagged so that downstream parity hashing can be
//! restricted to the trajectory-defining variables.

use std::collections::BTreeMap;

use crate::constraints::{
    fraction_ratio, required_encoding, Constraint, ConstraintSet, EncodingKind,
};
use crate::error::{Error, Result};
use crate::mdp::{ActionId, FeatureMap, Mdp, ModelParams, StateId, Trajectory};

/// Index of a binary variable inside one encoding.
pub type VarId = usize;

/// Comparison direction of a linear constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// An integer linear constraint Σ cᵢ·xᵢ ⋈ b over binary variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearConstraint {
    pub terms: Vec<(i64, VarId)>,
    pub relation: Relation,
    pub bound: i64,
}

impl LinearConstraint {
    pub fn le(terms: Vec<(i64, VarId)>, bound: i64) -> Self {
        Self { terms, relation: Relation::Le, bound }
    }

    pub fn eq(terms: Vec<(i64, VarId)>, bound: i64) -> Self {
        Self { terms, relation: Relation::Eq, bound }
    }

    pub fn ge(terms: Vec<(i64, VarId)>, bound: i64) -> Self {
        Self { terms, relation: Relation::Ge, bound }
    }

    /// A constraint no assignment satisfies (empty sum ≥ 1).
    pub fn unsatisfiable() -> Self {
        Self::ge(Vec::new(), 1)
    }

    pub fn eval(&self, assignment: &[bool]) -> bool {
        let lhs: i64 = self
            .terms
            .iter()
            .map(|&(c, v)| if assignment[v] { c } else { 0 })
            .sum();
        match self.relation {
            Relation::Le => lhs <= self.bound,
            Relation::Eq => lhs == self.bound,
            Relation::Ge => lhs >= self.bound,
        }
    }
}

/// A parity constraint ⊕ xᵢ = parity_bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XorConstraint {
    pub vars: Vec<VarId>,
    pub parity_bit: bool,
}

impl XorConstraint {
    /// The empty-even row is a tautology and the empty-odd row a
    /// contradiction; both are representable, because uniform random
    /// parity draws produce them (and excluding the contradiction
    /// would skew the hash family's halving expectation).
    pub fn new(vars: Vec<VarId>, parity_bit: bool) -> Result<Self> {
        Ok(Self { vars, parity_bit })
    }

    pub fn eval(&self, assignment: &[bool]) -> bool {
        let parity = self.vars.iter().filter(|&&v| assignment[v]).count() % 2 == 1;
        parity == self.parity_bit
    }
}

/// What a variable means; `Aux` marks helper variables that are not
/// part of the trajectory itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarMeaning {
    /// Flow: the trajectory uses action `a` in state `s`.
    Edge { s: StateId, a: ActionId },
    /// TimeIndexed: step `t` of the trajectory is (s, a).
    Step { s: StateId, a: ActionId, t: usize },
    /// TimeIndexed: the trajectory has terminated by layer `t`.
    Done { t: usize },
    /// Compilation helper, excluded from parity pools.
    Aux(AuxRole),
}

/// Why an auxiliary variable exists (used to reconstruct its value when
/// re-encoding a known trajectory).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxRole {
    /// Precedence: the designated first state has been visited at some
    /// layer ≤ t.
    FirstSeenBy { first: StateId, t: usize },
    /// Exactly-one-of: member state `s` is visited at least once.
    MemberVisited { s: StateId },
}

/// A compiled variable space: the bijection between variable ids and
/// their meanings, plus enough geometry to decode assignments.
#[derive(Debug, Clone)]
pub struct BinaryEncoding {
    kind: EncodingKind,
    meanings: Vec<VarMeaning>,
    step_index: BTreeMap<(StateId, ActionId, usize), VarId>,
    done_index: Vec<VarId>,
    horizon: Option<usize>,
    start: StateId,
    goal: StateId,
    n_actions: usize,
}

impl BinaryEncoding {
    pub fn kind(&self) -> EncodingKind {
        self.kind
    }

    pub fn n_vars(&self) -> usize {
        self.meanings.len()
    }

    /// Horizon of a time-indexed encoding; `None` for flow.
    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn goal(&self) -> StateId {
        self.goal
    }

    pub fn meaning(&self, v: VarId) -> VarMeaning {
        self.meanings[v]
    }

    /// Flow variable for (s, a); defined for every pair, available or not.
    pub fn edge_var(&self, s: StateId, a: ActionId) -> Option<VarId> {
        match self.kind {
            EncodingKind::Flow => Some(s * self.n_actions + a),
            EncodingKind::TimeIndexed => None,
        }
    }

    /// TimeIndexed variable for (s, a) at layer t, if the pair is
    /// available.
    pub fn step_var(&self, s: StateId, a: ActionId, t: usize) -> Option<VarId> {
        self.step_index.get(&(s, a, t)).copied()
    }

    /// TimeIndexed done flag for layer t ∈ 0..=horizon.
    pub fn done_var(&self, t: usize) -> Option<VarId> {
        self.done_index.get(t).copied()
    }

    /// The trajectory-defining variables (edges or steps), in id order.
    /// This is the pool parity constraints are drawn from; done flags
    /// and compilation auxiliaries are excluded.
    pub fn trajectory_vars(&self) -> Vec<VarId> {
        self.meanings
            .iter()
            .enumerate()
            .filter(|(_, m)| matches!(m, VarMeaning::Edge { .. } | VarMeaning::Step { .. }))
            .map(|(v, _)| v)
            .collect()
    }

    /// Per-variable contribution to the trajectory energy θᵀf(τ): a
    /// satisfying assignment's energy is the sum of coefficients of its
    /// active variables. Flow encodings carry no step index, so they
    /// only support undiscounted energies (the MDP's discount must be 1).
    pub fn energy_coefficients(
        &self,
        params: &ModelParams,
        fmap: &FeatureMap,
        mdp: &Mdp,
    ) -> Result<Vec<f64>> {
        let discount = mdp.discount();
        if self.kind == EncodingKind::Flow && (discount - 1.0).abs() > 1e-12 {
            return Err(Error::Encoding(
                "flow encodings cannot express discounted energies; use the time-indexed kind"
                    .into(),
            ));
        }
        let dot = |s: StateId, a: ActionId| -> Result<f64> {
            let f = fmap.get(s, a)?;
            if f.len() != params.theta.len() {
                return Err(Error::Config(format!(
                    "parameter dimension {} does not match feature dimension {}",
                    params.theta.len(),
                    f.len()
                )));
            }
            Ok(params.theta.iter().zip(f).map(|(t, fi)| t * fi).sum())
        };
        let mut coefs = vec![0.0; self.n_vars()];
        for (v, m) in self.meanings.iter().enumerate() {
            coefs[v] = match *m {
                // unavailable pairs are pinned to zero by the base
                // constraints, so their coefficients never matter
                VarMeaning::Edge { s, a } => {
                    if mdp.is_available(s, a) {
                        dot(s, a)?
                    } else {
                        0.0
                    }
                }
                VarMeaning::Step { s, a, t } => discount.powi(t as i32 + 1) * dot(s, a)?,
                VarMeaning::Done { .. } | VarMeaning::Aux(_) => 0.0,
            };
        }
        Ok(coefs)
    }

    /// log₂ of an upper bound on the number of satisfying assignments,
    /// from an unconstrained path count. Used only to seed the parity
    /// search, never for correctness.
    pub fn log2_count_hint(&self, mdp: &Mdp) -> f64 {
        match self.kind {
            EncodingKind::Flow => {
                fn paths(
                    mdp: &Mdp,
                    goal: StateId,
                    s: StateId,
                    memo: &mut Vec<Option<f64>>,
                ) -> f64 {
                    if s == goal {
                        return 1.0;
                    }
                    if let Some(c) = memo[s] {
                        return c;
                    }
                    let mut total = 0.0;
                    for a in mdp.available_actions(s) {
                        if let Some(s2) = mdp.deterministic_successor(s, a) {
                            total += paths(mdp, goal, s2, memo);
                        }
                    }
                    memo[s] = Some(total);
                    total
                }
                let mut memo: Vec<Option<f64>> = vec![None; mdp.n_states()];
                paths(mdp, self.goal, self.start, &mut memo).max(1.0).log2()
            }
            EncodingKind::TimeIndexed => {
                // layered path count: mass flowing out of non-goal
                // states, accumulating arrivals at the goal
                let h = self.horizon.unwrap_or(0);
                let mut now = vec![0.0f64; mdp.n_states()];
                now[self.start] = 1.0;
                let mut arrived = if self.start == self.goal { 1.0 } else { 0.0 };
                for _ in 0..h {
                    let mut next = vec![0.0f64; mdp.n_states()];
                    for s in 0..mdp.n_states() {
                        if now[s] == 0.0 || s == self.goal {
                            continue;
                        }
                        for a in mdp.available_actions(s) {
                            if let Some(s2) = mdp.deterministic_successor(s, a) {
                                next[s2] += now[s];
                            }
                        }
                    }
                    arrived += next[self.goal];
                    next[self.goal] = 0.0;
                    now = next;
                }
                arrived.max(1.0).log2()
            }
        }
    }

    /// Re-encodes a known trajectory as a full assignment, including
    /// the values of done flags and compilation auxiliaries. Inverse of
    /// [`decode`] on valid trajectories.
    pub fn encode_trajectory(&self, traj: &Trajectory, mdp: &Mdp) -> Result<Vec<bool>> {
        if traj.start() != self.start || traj.terminal != self.goal {
            return Err(Error::Decode(
                "trajectory endpoints do not match the encoding".into(),
            ));
        }
        if !traj.is_consistent(mdp) {
            return Err(Error::Decode("trajectory is dynamically impossible".into()));
        }
        let mut x = vec![false; self.n_vars()];
        match self.kind {
            EncodingKind::Flow => {
                for &(s, a) in &traj.steps {
                    let v = self.edge_var(s, a).unwrap();
                    if x[v] {
                        return Err(Error::Decode(
                            "flow encodings cannot represent repeated edges".into(),
                        ));
                    }
                    x[v] = true;
                }
            }
            EncodingKind::TimeIndexed => {
                let h = self.horizon.unwrap();
                if traj.len() > h {
                    return Err(Error::Decode(format!(
                        "trajectory length {} exceeds horizon {h}",
                        traj.len()
                    )));
                }
                for (t, &(s, a)) in traj.steps.iter().enumerate() {
                    let v = self.step_var(s, a, t).ok_or_else(|| {
                        Error::Decode(format!("no variable for step ({s}, {a}) at layer {t}"))
                    })?;
                    x[v] = true;
                }
                for t in traj.len()..=h {
                    x[self.done_index[t]] = true;
                }
                // auxiliaries are pure functions of the trajectory
                let visited_at =
                    |s: StateId| -> Option<usize> { traj.visited().position(|u| u == s) };
                for (v, m) in self.meanings.iter().enumerate() {
                    if let VarMeaning::Aux(role) = m {
                        x[v] = match *role {
                            AuxRole::FirstSeenBy { first, t } => {
                                visited_at(first).map(|i| i <= t).unwrap_or(false)
                            }
                            AuxRole::MemberVisited { s } => visited_at(s).is_some(),
                        };
                    }
                }
            }
        }
        Ok(x)
    }
}

/// Compiles `mdp` + `cset`, choosing the encoding kind automatically:
/// flow when the constraint set permits it and the MDP is flow-eligible
/// (deterministic, point start, acyclic, undiscounted), time-indexed
/// otherwise.
pub fn encode(
    mdp: &Mdp,
    cset: &ConstraintSet,
    horizon: usize,
) -> Result<(BinaryEncoding, Vec<LinearConstraint>)> {
    let kind = match required_encoding(cset) {
        EncodingKind::TimeIndexed => EncodingKind::TimeIndexed,
        EncodingKind::Flow if flow_eligible(mdp) => EncodingKind::Flow,
        EncodingKind::Flow => EncodingKind::TimeIndexed,
    };
    encode_with_kind(mdp, cset, horizon, kind)
}

fn flow_eligible(mdp: &Mdp) -> bool {
    mdp.is_deterministic()
        && mdp.point_start().is_some()
        && mdp.goal().is_some()
        && (mdp.discount() - 1.0).abs() <= 1e-12
        && reachable_graph_is_acyclic(mdp).unwrap_or(false)
}

/// Compiles with an explicit kind, erroring when the kind cannot
/// faithfully express the instance.
pub fn encode_with_kind(
    mdp: &Mdp,
    cset: &ConstraintSet,
    horizon: usize,
    kind: EncodingKind,
) -> Result<(BinaryEncoding, Vec<LinearConstraint>)> {
    if !mdp.is_deterministic() {
        return Err(Error::Encoding(
            "binary encodings require a deterministic MDP".into(),
        ));
    }
    let start = mdp.point_start().ok_or_else(|| {
        Error::Encoding("binary encodings require a point-mass initial distribution".into())
    })?;
    let goal = mdp
        .goal()
        .ok_or_else(|| Error::Encoding("binary encodings require a goal state".into()))?;
    if kind == EncodingKind::Flow && required_encoding(cset) == EncodingKind::TimeIndexed {
        return Err(Error::Encoding(
            "constraint set contains order-sensitive constraints; flow cannot express them"
                .into(),
        ));
    }
    match kind {
        EncodingKind::Flow => encode_flow(mdp, cset, start, goal),
        EncodingKind::TimeIndexed => encode_time_indexed(mdp, cset, horizon, start, goal),
    }
}

/// Cycle check on the subgraph reachable from every positive-mass
/// initial state (iterative three-color DFS).
fn reachable_graph_is_acyclic(mdp: &Mdp) -> Result<bool> {
    const WHITE: u8 = 0;
    const GRAY: u8 = 1;
    const BLACK: u8 = 2;
    let mut color = vec![WHITE; mdp.n_states()];
    let succs = |s: StateId| -> Vec<StateId> {
        mdp.available_actions(s)
            .filter_map(|a| mdp.deterministic_successor(s, a))
            .collect()
    };
    for (root, &d0) in mdp.initial().iter().enumerate() {
        if d0 <= 0.0 || color[root] != WHITE {
            continue;
        }
        // stack of (state, next-successor cursor)
        let mut stack: Vec<(StateId, usize)> = vec![(root, 0)];
        color[root] = GRAY;
        while let Some(&mut (s, ref mut cursor)) = stack.last_mut() {
            let nexts = succs(s);
            if *cursor >= nexts.len() {
                color[s] = BLACK;
                stack.pop();
                continue;
            }
            let s2 = nexts[*cursor];
            *cursor += 1;
            match color[s2] {
                GRAY => return Ok(false),
                WHITE => {
                    color[s2] = GRAY;
                    stack.push((s2, 0));
                }
                _ => {}
            }
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Flow compilation
// ---------------------------------------------------------------------------

fn encode_flow(
    mdp: &Mdp,
    cset: &ConstraintSet,
    start: StateId,
    goal: StateId,
) -> Result<(BinaryEncoding, Vec<LinearConstraint>)> {
    if !reachable_graph_is_acyclic(mdp)? {
        return Err(Error::Encoding(
            "flow encodings require an acyclic reachable transition graph".into(),
        ));
    }
    let n_states = mdp.n_states();
    let n_actions = mdp.n_actions();
    let mut meanings = Vec::with_capacity(n_states * n_actions);
    for s in 0..n_states {
        for a in 0..n_actions {
            meanings.push(VarMeaning::Edge { s, a });
        }
    }
    let enc = BinaryEncoding {
        kind: EncodingKind::Flow,
        meanings,
        step_index: BTreeMap::new(),
        done_index: Vec::new(),
        horizon: None,
        start,
        goal,
        n_actions,
    };
    let var = |s: StateId, a: ActionId| s * n_actions + a;
    let mut rows: Vec<LinearConstraint> = Vec::new();

    // unavailable pairs (including every action of the absorbing goal)
    // are pinned to zero so the variable count stays exactly |S|·|A|
    for s in 0..n_states {
        for a in 0..n_actions {
            if !mdp.is_available(s, a) {
                rows.push(LinearConstraint::eq(vec![(1, var(s, a))], 0));
            }
        }
    }

    // a degenerate instance has a single candidate trajectory: the
    // empty one; no flow is needed and the indicator decides everything
    if start == goal {
        for s in 0..n_states {
            for a in 0..n_actions {
                if mdp.is_available(s, a) {
                    rows.push(LinearConstraint::eq(vec![(1, var(s, a))], 0));
                }
            }
        }
        let empty = Trajectory { steps: Vec::new(), terminal: goal };
        if !crate::constraints::indicator(&empty, cset) {
            rows.push(LinearConstraint::unsatisfiable());
        }
        return Ok((enc, rows));
    }

    let outflow = |s: StateId| -> Vec<(i64, VarId)> {
        mdp.available_actions(s).map(|a| (1, var(s, a))).collect()
    };
    // incoming available edges per state
    let mut inflow: Vec<Vec<(i64, VarId)>> = vec![Vec::new(); n_states];
    for s in 0..n_states {
        for a in mdp.available_actions(s) {
            if let Some(s2) = mdp.deterministic_successor(s, a) {
                inflow[s2].push((1, var(s, a)));
            }
        }
    }

    // unit outflow at the start, unit inflow at the goal, conservation
    // everywhere else; on an acyclic graph this characterizes exactly
    // the simple start→goal paths
    rows.push(LinearConstraint::eq(outflow(start), 1));
    if !inflow[start].is_empty() {
        rows.push(LinearConstraint::eq(inflow[start].clone(), 0));
    }
    rows.push(LinearConstraint::eq(inflow[goal].clone(), 1));
    for s in 0..n_states {
        if s == start || s == goal {
            continue;
        }
        let mut terms = outflow(s);
        for &(c, v) in &inflow[s] {
            terms.push((-c, v));
        }
        if !terms.is_empty() {
            rows.push(LinearConstraint::eq(terms, 0));
        }
    }

    // the per-state visit count: outgoing flow for everything except
    // the absorbing goal, whose single visit is its incoming flow
    let visit_expr = |s: StateId| -> Vec<(i64, VarId)> {
        if s == goal {
            inflow[s].clone()
        } else {
            outflow(s)
        }
    };

    for c in cset.items() {
        match c {
            Constraint::ForbiddenStates(set) => {
                for &s in set {
                    if s == start || s == goal {
                        rows.push(LinearConstraint::unsatisfiable());
                    } else if !visit_expr(s).is_empty() {
                        rows.push(LinearConstraint::eq(visit_expr(s), 0));
                    }
                }
            }
            Constraint::MustPass(s) => {
                if *s != start && *s != goal {
                    // an unleavable state yields an empty (unsatisfiable)
                    // sum ≥ 1, which is the correct semantics
                    rows.push(LinearConstraint::ge(visit_expr(*s), 1));
                }
            }
            Constraint::ExactlyOneOf(set) => {
                let mut merged: BTreeMap<VarId, i64> = BTreeMap::new();
                let mut constant = 0i64;
                for &s in set {
                    if s == start {
                        constant += 1; // start is always visited once
                    } else {
                        for (c, v) in visit_expr(s) {
                            *merged.entry(v).or_insert(0) += c;
                        }
                    }
                }
                let terms: Vec<(i64, VarId)> = merged.into_iter().map(|(v, c)| (c, v)).collect();
                rows.push(LinearConstraint::eq(terms, 1 - constant));
            }
            Constraint::Precedence { .. } | Constraint::MaxConsecutiveSameAction(_) => {
                unreachable!("order-sensitive constraints are rejected before flow compilation")
            }
            Constraint::AtLeastFractionInRegion { region, fraction } => {
                // q·(visits in region) ≥ p·(total visits), with total
                // visits = (number of active edges) + 1 for the terminal
                let (p, q) = fraction_ratio(*fraction);
                let (p, q) = (p as i64, q as i64);
                let mut merged: BTreeMap<VarId, i64> = BTreeMap::new();
                let mut constant = 0i64;
                for &s in region {
                    if s == start {
                        constant += q;
                    } else {
                        for (c, v) in visit_expr(s) {
                            *merged.entry(v).or_insert(0) += q * c;
                        }
                    }
                }
                for s in 0..n_states {
                    for a in mdp.available_actions(s) {
                        *merged.entry(var(s, a)).or_insert(0) -= p;
                    }
                }
                let terms: Vec<(i64, VarId)> = merged.into_iter().map(|(v, c)| (c, v)).collect();
                rows.push(LinearConstraint::ge(terms, p - constant));
            }
        }
    }
    Ok((enc, rows))
}

// ---------------------------------------------------------------------------
// Time-indexed compilation
// ---------------------------------------------------------------------------

struct TiBuilder {
    meanings: Vec<VarMeaning>,
    rows: Vec<LinearConstraint>,
}

impl TiBuilder {
    fn fresh(&mut self, m: VarMeaning) -> VarId {
        self.meanings.push(m);
        self.meanings.len() - 1
    }
}

fn encode_time_indexed(
    mdp: &Mdp,
    cset: &ConstraintSet,
    horizon: usize,
    start: StateId,
    goal: StateId,
) -> Result<(BinaryEncoding, Vec<LinearConstraint>)> {
    // the goal must be reachable inside the horizon at all
    let dist_start = bfs_dist(mdp, start, Direction::Forward);
    let dist_goal = bfs_dist(mdp, goal, Direction::Backward);
    match dist_start[goal] {
        Some(d) if d <= horizon => {}
        _ => {
            return Err(Error::Encoding(format!(
                "goal unreachable within horizon {horizon}"
            )))
        }
    }

    let mut b = TiBuilder { meanings: Vec::new(), rows: Vec::new() };

    // step variables y[s, a, t] for every available pair and layer
    let mut step_index: BTreeMap<(StateId, ActionId, usize), VarId> = BTreeMap::new();
    for t in 0..horizon {
        for s in 0..mdp.n_states() {
            for a in mdp.available_actions(s) {
                let v = b.fresh(VarMeaning::Step { s, a, t });
                step_index.insert((s, a, t), v);
            }
        }
    }
    // done flags for layers 0..=horizon
    let done_index: Vec<VarId> = (0..=horizon).map(|t| b.fresh(VarMeaning::Done { t })).collect();

    // endpoint conventions
    b.rows.push(LinearConstraint::eq(
        vec![(1, done_index[0])],
        i64::from(start == goal),
    ));
    b.rows.push(LinearConstraint::eq(vec![(1, done_index[horizon])], 1));
    for t in 0..horizon {
        // done is monotone
        b.rows.push(LinearConstraint::ge(
            vec![(1, done_index[t + 1]), (-1, done_index[t])],
            0,
        ));
    }

    // exactly one activity per layer: a step or the done flag
    for t in 0..horizon {
        let mut terms: Vec<(i64, VarId)> = Vec::new();
        for s in 0..mdp.n_states() {
            for a in mdp.available_actions(s) {
                terms.push((1, step_index[&(s, a, t)]));
            }
        }
        terms.push((1, done_index[t]));
        b.rows.push(LinearConstraint::eq(terms, 1));
    }

    // incoming available edges per state
    let mut preds: Vec<Vec<(StateId, ActionId)>> = vec![Vec::new(); mdp.n_states()];
    for s in 0..mdp.n_states() {
        for a in mdp.available_actions(s) {
            if let Some(s2) = mdp.deterministic_successor(s, a) {
                preds[s2].push((s, a));
            }
        }
    }

    // chaining: arrivals at layer t+1 equal departures from layer t.
    // Arrivals at a non-goal state in the final layer are impossible
    // (there is no step variable left to leave it).
    for s2 in 0..mdp.n_states() {
        if s2 == goal {
            continue;
        }
        for t in 0..horizon {
            let mut terms: Vec<(i64, VarId)> = preds[s2]
                .iter()
                .map(|&(s, a)| (1, step_index[&(s, a, t)]))
                .collect();
            if t + 1 < horizon {
                for a in mdp.available_actions(s2) {
                    terms.push((-1, step_index[&(s2, a, t + 1)]));
                }
            }
            if !terms.is_empty() {
                b.rows.push(LinearConstraint::eq(terms, 0));
            }
        }
    }
    // ... except the start, which is also active at layer 0 without an
    // arrival: y[s, a, 0] = 0 for all s ≠ start
    for s in 0..mdp.n_states() {
        if s == start {
            continue;
        }
        for a in mdp.available_actions(s) {
            b.rows.push(LinearConstraint::eq(vec![(1, step_index[&(s, a, 0)])], 0));
        }
    }
    // goal arrival flips the done flag: Σ preds(goal) at t = done[t+1] − done[t]
    for t in 0..horizon {
        let mut terms: Vec<(i64, VarId)> = preds[goal]
            .iter()
            .map(|&(s, a)| (1, step_index[&(s, a, t)]))
            .collect();
        terms.push((-1, done_index[t + 1]));
        terms.push((1, done_index[t]));
        b.rows.push(LinearConstraint::eq(terms, 0));
    }

    // redundant reachability pins: a step (s, a) at layer t needs t
    // layers to reach s and must still reach the goal in time
    for (&(s, a, t), &v) in &step_index {
        let reachable_in_time = matches!(dist_start[s], Some(d) if d <= t);
        let can_finish = mdp
            .deterministic_successor(s, a)
            .and_then(|s2| dist_goal[s2])
            .map(|d| t + 1 + d <= horizon)
            .unwrap_or(false);
        if !reachable_in_time || !can_finish {
            b.rows.push(LinearConstraint::eq(vec![(1, v)], 0));
        }
    }

    // per-state visit count: occurrences as a step source, plus the
    // single terminal visit for the goal
    let visit_terms = |s: StateId| -> Vec<(i64, VarId)> {
        let mut terms = Vec::new();
        for t in 0..horizon {
            for a in mdp.available_actions(s) {
                terms.push((1, step_index[&(s, a, t)]));
            }
        }
        terms
    };

    for c in cset.items() {
        match c {
            Constraint::ForbiddenStates(set) => {
                for &s in set {
                    if s == start || s == goal {
                        b.rows.push(LinearConstraint::unsatisfiable());
                    } else {
                        let terms = visit_terms(s);
                        if !terms.is_empty() {
                            b.rows.push(LinearConstraint::eq(terms, 0));
                        }
                    }
                }
            }
            Constraint::MustPass(s) => {
                if *s != start && *s != goal {
                    b.rows.push(LinearConstraint::ge(visit_terms(*s), 1));
                }
            }
            Constraint::ExactlyOneOf(set) => {
                // indicator z_s ⇔ (s visited at least once); Σ z = 1
                let mut zs = Vec::new();
                for &s in set {
                    let z = b.fresh(VarMeaning::Aux(AuxRole::MemberVisited { s }));
                    zs.push(z);
                    if s == goal {
                        // the goal is always visited exactly once
                        b.rows.push(LinearConstraint::eq(vec![(1, z)], 1));
                        continue;
                    }
                    let terms = visit_terms(s);
                    let cap = horizon as i64;
                    let mut le = vec![(-1i64, z)];
                    le.extend(terms.iter().copied());
                    // z ≤ visits ≤ horizon·z
                    b.rows.push(LinearConstraint::ge(le, 0));
                    let mut ge = vec![(cap, z)];
                    for &(c0, v0) in &terms {
                        ge.push((-c0, v0));
                    }
                    b.rows.push(LinearConstraint::ge(ge, 0));
                }
                b.rows.push(LinearConstraint::eq(zs.into_iter().map(|z| (1, z)).collect(), 1));
            }
            Constraint::Precedence { first, others } => {
                compile_precedence(
                    &mut b, mdp, &step_index, &done_index, horizon, start, goal, *first, others,
                );
            }
            Constraint::MaxConsecutiveSameAction(limit) => {
                // any window of limit+1 consecutive layers uses action a
                // at most limit times
                let m = *limit;
                for a in 0..mdp.n_actions() {
                    for t0 in 0..horizon.saturating_sub(m) {
                        let mut terms: Vec<(i64, VarId)> = Vec::new();
                        for t in t0..=t0 + m {
                            for s in 0..mdp.n_states() {
                                if let Some(&v) = step_index.get(&(s, a, t)) {
                                    terms.push((1, v));
                                }
                            }
                        }
                        if terms.len() > m {
                            b.rows.push(LinearConstraint::le(terms, m as i64));
                        }
                    }
                }
            }
            Constraint::AtLeastFractionInRegion { region, fraction } => {
                // q·(visits in region) ≥ p·(steps + 1)
                let (p, q) = fraction_ratio(*fraction);
                let (p, q) = (p as i64, q as i64);
                let mut merged: BTreeMap<VarId, i64> = BTreeMap::new();
                let constant = if region.contains(&goal) { q } else { 0 };
                for &s in region {
                    for (c0, v0) in visit_terms(s) {
                        *merged.entry(v0).or_insert(0) += q * c0;
                    }
                }
                for &v in step_index.values() {
                    *merged.entry(v).or_insert(0) -= p;
                }
                let terms: Vec<(i64, VarId)> = merged.into_iter().map(|(v, c0)| (c0, v)).collect();
                b.rows.push(LinearConstraint::ge(terms, p - constant));
            }
        }
    }

    let enc = BinaryEncoding {
        kind: EncodingKind::TimeIndexed,
        meanings: b.meanings,
        step_index,
        done_index,
        horizon: Some(horizon),
        start,
        goal,
        n_actions: mdp.n_actions(),
    };
    Ok((enc, b.rows))
}

/// Precedence compilation: prefix flags F_t ⇔ (first visited by layer
/// t), and every other member may only be active at layer t when
/// F_{t−1} already holds.
#[allow(clippy::too_many_arguments)]
fn compile_precedence(
    b: &mut TiBuilder,
    mdp: &Mdp,
    step_index: &BTreeMap<(StateId, ActionId, usize), VarId>,
    done_index: &[VarId],
    horizon: usize,
    start: StateId,
    goal: StateId,
    first: StateId,
    others: &std::collections::BTreeSet<StateId>,
) {
    let visit_at = |s: StateId, t: usize| -> Vec<(i64, VarId)> {
        mdp.available_actions(s)
            .filter_map(|a| step_index.get(&(s, a, t)).map(|&v| (1i64, v)))
            .collect()
    };

    if first == goal {
        // the goal is always the last visit, so any visited other-member
        // would precede it: all others must be unvisited
        for &o in others {
            if o == start || o == goal {
                b.rows.push(LinearConstraint::unsatisfiable());
            } else {
                let terms = visit_at_all_layers(mdp, step_index, horizon, o);
                if !terms.is_empty() {
                    b.rows.push(LinearConstraint::eq(terms, 0));
                }
            }
        }
        return;
    }

    // F_0 = (first active at layer 0); F_t = F_{t−1} ∨ (first active at t)
    let mut f_prev: Option<VarId> = None;
    let mut f_vars = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let f = b.fresh(VarMeaning::Aux(AuxRole::FirstSeenBy { first, t }));
        f_vars.push(f);
        let v1 = visit_at(first, t);
        match f_prev {
            None => {
                let mut terms = vec![(1i64, f)];
                for &(c, v) in &v1 {
                    terms.push((-c, v));
                }
                b.rows.push(LinearConstraint::eq(terms, 0));
            }
            Some(fp) => {
                b.rows.push(LinearConstraint::ge(vec![(1, f), (-1, fp)], 0));
                let mut ge1 = vec![(1i64, f)];
                for &(c, v) in &v1 {
                    ge1.push((-c, v));
                }
                b.rows.push(LinearConstraint::ge(ge1, 0));
                let mut le = vec![(-1i64, f), (1, fp)];
                le.extend(v1.iter().copied());
                b.rows.push(LinearConstraint::ge(le, 0));
            }
        }
        f_prev = Some(f);
    }

    for &o in others {
        if o == goal {
            // goal-member arrival at layer t (t ≥ 1) needs F_{t−1};
            // arrival at layer 0 means start == goal, handled upstream
            for t in 1..=horizon {
                b.rows.push(LinearConstraint::ge(
                    vec![(1, f_vars[t - 1]), (1, done_index[t - 1]), (-1, done_index[t])],
                    0,
                ));
            }
            continue;
        }
        // not active at layer 0 (covers o == start as an unsatisfiable
        // requirement, since the start is necessarily active there)
        let at0 = visit_at(o, 0);
        if o == start {
            b.rows.push(LinearConstraint::unsatisfiable());
        } else if !at0.is_empty() {
            b.rows.push(LinearConstraint::eq(at0, 0));
        }
        for t in 1..horizon {
            let att = visit_at(o, t);
            if att.is_empty() {
                continue;
            }
            let mut terms = vec![(1i64, f_vars[t - 1])];
            for &(c, v) in &att {
                terms.push((-c, v));
            }
            b.rows.push(LinearConstraint::ge(terms, 0));
        }
    }
}

fn visit_at_all_layers(
    mdp: &Mdp,
    step_index: &BTreeMap<(StateId, ActionId, usize), VarId>,
    horizon: usize,
    s: StateId,
) -> Vec<(i64, VarId)> {
    let mut terms = Vec::new();
    for t in 0..horizon {
        for a in mdp.available_actions(s) {
            if let Some(&v) = step_index.get(&(s, a, t)) {
                terms.push((1, v));
            }
        }
    }
    terms
}

enum Direction {
    Forward,
    Backward,
}

/// BFS distances over the deterministic graph, from a state (forward)
/// or to a state (backward).
fn bfs_dist(mdp: &Mdp, origin: StateId, dir: Direction) -> Vec<Option<usize>> {
    let mut adj: Vec<Vec<StateId>> = vec![Vec::new(); mdp.n_states()];
    for s in 0..mdp.n_states() {
        for a in mdp.available_actions(s) {
            if let Some(s2) = mdp.deterministic_successor(s, a) {
                match dir {
                    Direction::Forward => adj[s].push(s2),
                    Direction::Backward => adj[s2].push(s),
                }
            }
        }
    }
    let mut dist = vec![None; mdp.n_states()];
    dist[origin] = Some(0);
    let mut queue = std::collections::VecDeque::from([origin]);
    while let Some(s) = queue.pop_front() {
        let d = dist[s].unwrap();
        for &s2 in &adj[s] {
            if dist[s2].is_none() {
                dist[s2] = Some(d + 1);
                queue.push_back(s2);
            }
        }
    }
    dist
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// Reconstructs the unique trajectory a satisfying assignment encodes.
/// Fails only on assignments that violate the structural constraints —
/// reaching such a failure from an oracle-produced assignment indicates
/// an encoding bug.
pub fn decode(assignment: &[bool], enc: &BinaryEncoding, mdp: &Mdp) -> Result<Trajectory> {
    if assignment.len() != enc.n_vars() {
        return Err(Error::Decode(format!(
            "assignment has {} variables, encoding expects {}",
            assignment.len(),
            enc.n_vars()
        )));
    }
    match enc.kind {
        EncodingKind::Flow => decode_flow(assignment, enc, mdp),
        EncodingKind::TimeIndexed => decode_time_indexed(assignment, enc, mdp),
    }
}

fn decode_flow(assignment: &[bool], enc: &BinaryEncoding, mdp: &Mdp) -> Result<Trajectory> {
    let mut active: BTreeMap<StateId, Vec<ActionId>> = BTreeMap::new();
    let mut n_active = 0usize;
    for (v, &on) in assignment.iter().enumerate() {
        if !on {
            continue;
        }
        if let VarMeaning::Edge { s, a } = enc.meanings[v] {
            active.entry(s).or_default().push(a);
            n_active += 1;
        }
    }
    let mut steps = Vec::new();
    let mut s = enc.start;
    while s != enc.goal {
        let actions = active.remove(&s).unwrap_or_default();
        if actions.len() != 1 {
            return Err(Error::Decode(format!(
                "state {s} has {} active outgoing edges, expected 1",
                actions.len()
            )));
        }
        let a = actions[0];
        let s2 = mdp
            .deterministic_successor(s, a)
            .ok_or_else(|| Error::Decode(format!("active edge ({s}, {a}) is unavailable")))?;
        steps.push((s, a));
        s = s2;
        if steps.len() > n_active {
            return Err(Error::Decode("active edges do not form a simple path".into()));
        }
    }
    if steps.len() != n_active {
        return Err(Error::Decode(
            "assignment activates edges disconnected from the start".into(),
        ));
    }
    Ok(Trajectory { steps, terminal: enc.goal })
}

fn decode_time_indexed(
    assignment: &[bool],
    enc: &BinaryEncoding,
    mdp: &Mdp,
) -> Result<Trajectory> {
    let horizon = enc.horizon.unwrap();
    let mut per_layer: Vec<Vec<(StateId, ActionId)>> = vec![Vec::new(); horizon];
    for (v, &on) in assignment.iter().enumerate() {
        if !on {
            continue;
        }
        if let VarMeaning::Step { s, a, t } = enc.meanings[v] {
            per_layer[t].push((s, a));
        }
    }
    let done = |t: usize| assignment[enc.done_index[t]];
    let mut steps = Vec::new();
    let mut cur = enc.start;
    for (t, layer) in per_layer.iter().enumerate() {
        if done(t) {
            if !layer.is_empty() {
                return Err(Error::Decode(format!(
                    "layer {t} is both done and active"
                )));
            }
            break;
        }
        let &[(s, a)] = layer.as_slice() else {
            return Err(Error::Decode(format!(
                "layer {t} has {} active steps, expected 1",
                layer.len()
            )));
        };
        if s != cur {
            return Err(Error::Decode(format!(
                "layer {t} starts at state {s}, expected {cur}"
            )));
        }
        let s2 = mdp
            .deterministic_successor(s, a)
            .ok_or_else(|| Error::Decode(format!("active step ({s}, {a}) is unavailable")))?;
        steps.push((s, a));
        cur = s2;
    }
    if cur != enc.goal {
        return Err(Error::Decode(format!(
            "decoded walk ends at state {cur}, not the goal"
        )));
    }
    if !done(horizon) {
        return Err(Error::Decode("final done flag is unset".into()));
    }
    Ok(Trajectory { steps, terminal: enc.goal })
}

// ---------------------------------------------------------------------------
// Plain-text dump
// ---------------------------------------------------------------------------

/// Serializes a constraint system in the plain-text pseudo-boolean
/// format: one constraint per line, `±c·x_i … ⋈ b` for linear rows and
/// `x x_i x_j … = bit` for parity rows. A leading comment records the
/// variable count so the file round-trips even when trailing variables
/// are unconstrained.
pub fn dump_problem(n_vars: usize, linear: &[LinearConstraint], parity: &[XorConstraint]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "* vars: {n_vars}").unwrap();
    for row in linear {
        let mut line = String::new();
        for &(c, v) in &row.terms {
            if !line.is_empty() {
                line.push(' ');
            }
            write!(line, "{}{}·x{}", if c >= 0 { "+" } else { "-" }, c.abs(), v).unwrap();
        }
        let rel = match row.relation {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        };
        if line.is_empty() {
            writeln!(out, "{rel} {}", row.bound).unwrap();
        } else {
            writeln!(out, "{line} {rel} {}", row.bound).unwrap();
        }
    }
    for row in parity {
        let mut line = String::from("x");
        for &v in &row.vars {
            write!(line, " x{v}").unwrap();
        }
        writeln!(out, "{line} = {}", u8::from(row.parity_bit)).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::indicator;
    use crate::exact;
    use crate::mdp::{FeatureKind, GridAction, GridWorld, GridWorldSpec};
    use crate::oracle::{self, CountOutcome, OracleProblem, OracleStats, SolveOutcome, SolverConfig};

    fn grid(w: usize, h: usize, actions: Vec<GridAction>) -> GridWorld {
        GridWorld::build(GridWorldSpec {
            width: w,
            height: h,
            actions,
            start: [0, 0],
            goal: [w - 1, h - 1],
            features: FeatureKind::Distance,
            diag_cost: std::f64::consts::SQRT_2,
            discount: 1.0,
        })
        .unwrap()
    }

    fn problem(enc: &BinaryEncoding, rows: &[LinearConstraint]) -> OracleProblem {
        OracleProblem::new(enc.n_vars(), rows.to_vec(), Vec::new()).unwrap()
    }

    /// Enumerates all satisfying assignments (test scale only) and
    /// checks they decode bijectively onto the enumerated trajectories.
    fn assert_bijection(gw: &GridWorld, cset: &ConstraintSet, horizon: usize, kind: EncodingKind) {
        let (enc, rows) = encode_with_kind(gw.mdp(), cset, horizon, kind).unwrap();
        let prob = problem(&enc, &rows);
        let stats = OracleStats::default();
        let assignments = match oracle::enumerate_assignments(&prob, 1 << 22, &stats) {
            oracle::EnumerateOutcome::Assignments(a) => a,
            oracle::EnumerateOutcome::ExceedsCap => panic!("enumeration cap hit"),
        };
        let space = exact::enumerate(gw.mdp(), cset, horizon, 1 << 22).unwrap();
        assert_eq!(
            assignments.len(),
            space.len(),
            "assignment count vs trajectory count for {:?}",
            cset.items()
        );
        let mut decoded: Vec<Trajectory> = assignments
            .iter()
            .map(|a| decode(a, &enc, gw.mdp()).unwrap())
            .collect();
        decoded.sort_by(|a, b| a.steps.cmp(&b.steps));
        let mut expected = space.trajectories.clone();
        expected.sort_by(|a, b| a.steps.cmp(&b.steps));
        assert_eq!(decoded, expected);
        // round trip: re-encoding each trajectory satisfies every row
        for traj in &expected {
            assert!(indicator(traj, cset));
            let x = enc.encode_trajectory(traj, gw.mdp()).unwrap();
            assert!(rows.iter().all(|r| r.eval(&x)), "re-encoded row violated");
            assert_eq!(&decode(&x, &enc, gw.mdp()).unwrap(), traj);
        }
    }

    #[test]
    fn flow_uses_exactly_all_state_action_pairs() {
        let gw = grid(3, 3, vec![GridAction::Up, GridAction::Right]);
        let (enc, _) =
            encode_with_kind(gw.mdp(), &ConstraintSet::empty(), 4, EncodingKind::Flow).unwrap();
        assert_eq!(enc.n_vars(), 9 * 2);
        assert_eq!(enc.trajectory_vars().len(), 9 * 2);
        // the (s, a) ↔ var map is a bijection
        for s in 0..9 {
            for a in 0..2 {
                let v = enc.edge_var(s, a).unwrap();
                assert_eq!(enc.meaning(v), VarMeaning::Edge { s, a });
            }
        }
    }

    #[test]
    fn flow_two_by_two_has_two_satisfying_assignments() {
        let gw = grid(2, 2, vec![GridAction::Up, GridAction::Right]);
        assert_bijection(&gw, &ConstraintSet::empty(), 2, EncodingKind::Flow);
    }

    #[test]
    fn forbidding_all_start_neighbors_is_unsat() {
        let gw = grid(3, 3, vec![GridAction::Up, GridAction::Right]);
        let cset = ConstraintSet::new(
            vec![Constraint::ForbiddenStates(
                [gw.cell_id(1, 0).unwrap(), gw.cell_id(0, 1).unwrap()].into(),
            )],
            gw.mdp(),
        )
        .unwrap();
        for kind in [EncodingKind::Flow, EncodingKind::TimeIndexed] {
            let (enc, rows) = encode_with_kind(gw.mdp(), &cset, 4, kind).unwrap();
            let stats = OracleStats::default();
            let out = oracle::solve(
                &problem(&enc, &rows),
                7,
                &SolverConfig::default(),
                &stats,
            );
            assert!(matches!(out, SolveOutcome::Unsat), "{kind:?}");
        }
    }

    #[test]
    fn time_indexed_bijection_unconstrained() {
        let gw = grid(3, 3, vec![GridAction::Up, GridAction::Right, GridAction::DiagUpRight]);
        assert_bijection(&gw, &ConstraintSet::empty(), 4, EncodingKind::TimeIndexed);
    }

    #[test]
    fn time_indexed_bijection_each_constraint_variant() {
        let gw = grid(4, 4, vec![GridAction::Up, GridAction::Right, GridAction::DiagUpRight]);
        let id = |x: usize, y: usize| gw.cell_id(x, y).unwrap();
        let variants: Vec<Vec<Constraint>> = vec![
            vec![Constraint::ForbiddenStates([id(1, 1), id(2, 2)].into())],
            vec![Constraint::MustPass(id(2, 1))],
            vec![Constraint::ExactlyOneOf([id(1, 2), id(2, 1)].into())],
            vec![Constraint::Precedence {
                first: id(1, 1),
                others: [id(2, 2), id(3, 1)].into(),
            }],
            vec![Constraint::AtLeastFractionInRegion {
                region: [id(0, 1), id(1, 1), id(1, 2), id(2, 2)].into(),
                fraction: 0.4,
            }],
            vec![Constraint::MaxConsecutiveSameAction(2)],
            // all variants together
            vec![
                Constraint::ForbiddenStates([id(3, 0)].into()),
                Constraint::MustPass(id(1, 1)),
                Constraint::ExactlyOneOf([id(1, 2), id(2, 1)].into()),
                Constraint::Precedence { first: id(1, 1), others: [id(2, 2)].into() },
                Constraint::AtLeastFractionInRegion {
                    region: [id(0, 1), id(1, 1), id(1, 2), id(2, 2)].into(),
                    fraction: 0.3,
                },
                Constraint::MaxConsecutiveSameAction(2),
            ],
        ];
        for items in variants {
            let label = format!("{items:?}");
            let cset = ConstraintSet::new(items, gw.mdp()).unwrap();
            let space = exact::enumerate(gw.mdp(), &cset, 6, 1 << 20).unwrap();
            assert!(!space.is_empty(), "degenerate test case: {label}");
            assert_bijection(&gw, &cset, 6, EncodingKind::TimeIndexed);
        }
    }

    #[test]
    fn flow_bijection_with_flow_expressible_constraints() {
        let gw = grid(4, 4, vec![GridAction::Up, GridAction::Right, GridAction::DiagUpRight]);
        let id = |x: usize, y: usize| gw.cell_id(x, y).unwrap();
        let cset = ConstraintSet::new(
            vec![
                Constraint::ForbiddenStates([id(2, 0)].into()),
                Constraint::MustPass(id(1, 1)),
                Constraint::ExactlyOneOf([id(1, 2), id(2, 1), id(3, 3)].into()),
                Constraint::AtLeastFractionInRegion {
                    region: [id(0, 1), id(1, 1), id(1, 2)].into(),
                    fraction: 0.35,
                },
            ],
            gw.mdp(),
        )
        .unwrap();
        assert_bijection(&gw, &cset, 6, EncodingKind::Flow);
    }

    #[test]
    fn flow_and_time_indexed_agree_on_counts() {
        let gw = grid(4, 3, vec![GridAction::Up, GridAction::Right]);
        let cset = ConstraintSet::new(
            vec![Constraint::MustPass(gw.cell_id(2, 1).unwrap())],
            gw.mdp(),
        )
        .unwrap();
        let stats = OracleStats::default();
        let mut counts = Vec::new();
        for kind in [EncodingKind::Flow, EncodingKind::TimeIndexed] {
            let (enc, rows) = encode_with_kind(gw.mdp(), &cset, 5, kind).unwrap();
            match oracle::solve_all_count(&problem(&enc, &rows), 1 << 20, &stats) {
                CountOutcome::Exact(n) => counts.push(n),
                CountOutcome::ExceedsCap => panic!("cap"),
            }
        }
        assert_eq!(counts[0], counts[1]);
    }

    #[test]
    fn auto_kind_selection() {
        let gw = grid(3, 3, vec![GridAction::Up, GridAction::Right]);
        let (enc, _) = encode(gw.mdp(), &ConstraintSet::empty(), 4).unwrap();
        assert_eq!(enc.kind(), EncodingKind::Flow);
        let cset = ConstraintSet::new(
            vec![Constraint::MaxConsecutiveSameAction(1)],
            gw.mdp(),
        )
        .unwrap();
        let (enc, _) = encode(gw.mdp(), &cset, 4).unwrap();
        assert_eq!(enc.kind(), EncodingKind::TimeIndexed);
        // forcing flow with an order-sensitive constraint is an error
        assert!(encode_with_kind(gw.mdp(), &cset, 4, EncodingKind::Flow).is_err());
    }

    #[test]
    fn cyclic_graph_rejected_by_flow() {
        // two states with mutual deterministic moves form a cycle
        let mdp = Mdp::new(
            3,
            2,
            vec![
                vec![Some(vec![(1, 1.0)]), Some(vec![(2, 1.0)])],
                vec![Some(vec![(0, 1.0)]), Some(vec![(2, 1.0)])],
                vec![None, None],
            ],
            vec![1.0, 0.0, 0.0],
            1.0,
            Some(2),
        )
        .unwrap();
        let err = encode_with_kind(&mdp, &ConstraintSet::empty(), 4, EncodingKind::Flow);
        assert!(matches!(err, Err(Error::Encoding(_))));
        // ... but time-indexed handles it, including the revisit
        let (enc, rows) = encode_with_kind(&mdp, &ConstraintSet::empty(), 4, EncodingKind::TimeIndexed).unwrap();
        let stats = OracleStats::default();
        let space = exact::enumerate(&mdp, &ConstraintSet::empty(), 4, 1000).unwrap();
        match oracle::solve_all_count(&problem(&enc, &rows), 1000, &stats) {
            CountOutcome::Exact(n) => assert_eq!(n as usize, space.len()),
            CountOutcome::ExceedsCap => panic!("cap"),
        }
        // walks 0→2, 0→1→2, 0→1→0→2, 0→1→0→1→2
        assert_eq!(space.len(), 4);
    }

    #[test]
    fn horizon_too_small_is_an_error() {
        let gw = grid(4, 4, vec![GridAction::Up, GridAction::Right]);
        let err = encode_with_kind(gw.mdp(), &ConstraintSet::empty(), 5, EncodingKind::TimeIndexed);
        assert!(matches!(err, Err(Error::Encoding(_))));
        assert!(
            encode_with_kind(gw.mdp(), &ConstraintSet::empty(), 6, EncodingKind::TimeIndexed)
                .is_ok()
        );
    }

    #[test]
    fn degenerate_start_equals_goal() {
        let gw = GridWorld::build(GridWorldSpec {
            width: 2,
            height: 2,
            actions: vec![GridAction::Up, GridAction::Right],
            start: [1, 1],
            goal: [1, 1],
            features: FeatureKind::Distance,
            diag_cost: std::f64::consts::SQRT_2,
            discount: 1.0,
        })
        .unwrap();
        for kind in [EncodingKind::Flow, EncodingKind::TimeIndexed] {
            let (enc, rows) = encode_with_kind(gw.mdp(), &ConstraintSet::empty(), 2, kind).unwrap();
            let stats = OracleStats::default();
            let out = oracle::solve(&problem(&enc, &rows), 3, &SolverConfig::default(), &stats);
            let SolveOutcome::Sat(x) = out else { panic!("expected SAT") };
            let traj = decode(&x, &enc, gw.mdp()).unwrap();
            assert!(traj.is_empty());
            assert_eq!(traj.terminal, gw.goal_id());
        }
    }

    #[test]
    fn energy_coefficients_reproduce_trajectory_energy() {
        use crate::mdp::{path_feature, ModelParams};
        let spec = GridWorldSpec {
            width: 4,
            height: 4,
            actions: vec![GridAction::Up, GridAction::Right, GridAction::DiagUpRight],
            start: [0, 0],
            goal: [3, 3],
            features: FeatureKind::Both,
            diag_cost: std::f64::consts::SQRT_2,
            discount: 0.9,
        };
        let gw = GridWorld::build(spec).unwrap();
        let dim = gw.feature_map().dim();
        let theta = ModelParams::new((0..dim).map(|i| 0.1 * i as f64 - 0.3).collect()).unwrap();
        let (enc, _) =
            encode_with_kind(gw.mdp(), &ConstraintSet::empty(), 6, EncodingKind::TimeIndexed)
                .unwrap();
        let coefs = enc.energy_coefficients(&theta, gw.feature_map(), gw.mdp()).unwrap();
        let space = exact::enumerate(gw.mdp(), &ConstraintSet::empty(), 6, 10_000).unwrap();
        for traj in &space.trajectories {
            let x = enc.encode_trajectory(traj, gw.mdp()).unwrap();
            let linear: f64 = x
                .iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(v, _)| coefs[v])
                .sum();
            let f = path_feature(traj, gw.feature_map(), 0.9).unwrap();
            let direct: f64 = theta.theta.iter().zip(&f).map(|(t, fi)| t * fi).sum();
            assert!((linear - direct).abs() < 1e-9, "{linear} vs {direct}");
        }
        // flow refuses discounted energies (no step index to carry γᵗ)
        let gw1 = GridWorld::build(GridWorldSpec {
            width: 3,
            height: 3,
            actions: vec![GridAction::Up, GridAction::Right],
            start: [0, 0],
            goal: [2, 2],
            features: FeatureKind::Distance,
            diag_cost: std::f64::consts::SQRT_2,
            discount: 0.9,
        })
        .unwrap();
        let (encf, _) =
            encode_with_kind(gw1.mdp(), &ConstraintSet::empty(), 4, EncodingKind::Flow).unwrap();
        let theta1 = ModelParams::new(vec![0.5]).unwrap();
        assert!(encf
            .energy_coefficients(&theta1, gw1.feature_map(), gw1.mdp())
            .is_err());
    }

    #[test]
    fn count_hint_upper_bounds_the_space() {
        let gw = grid(5, 5, vec![GridAction::Up, GridAction::Right, GridAction::DiagUpRight]);
        let space = exact::enumerate(gw.mdp(), &ConstraintSet::empty(), 8, 1 << 20).unwrap();
        for kind in [EncodingKind::Flow, EncodingKind::TimeIndexed] {
            let (enc, _) = encode_with_kind(gw.mdp(), &ConstraintSet::empty(), 8, kind).unwrap();
            let hint = enc.log2_count_hint(gw.mdp());
            assert!(
                hint >= (space.len() as f64).log2() - 1e-9,
                "{kind:?}: hint {hint} vs {}",
                space.len()
            );
        }
    }

    #[test]
    fn degenerate_parity_rows_are_representable() {
        // the empty-odd row is a contradiction, the empty-even row a
        // tautology; both must round-trip so uniform parity draws stay
        // uniform
        let odd = XorConstraint::new(vec![], true).unwrap();
        assert!(!odd.eval(&[true, false]));
        let even = XorConstraint::new(vec![], false).unwrap();
        assert!(even.eval(&[true, false]));
        assert!(XorConstraint::new(vec![3], true).is_ok());
    }

    #[test]
    fn dump_round_trips_through_the_parser() {
        let gw = grid(3, 3, vec![GridAction::Up, GridAction::Right]);
        let (enc, rows) =
            encode_with_kind(gw.mdp(), &ConstraintSet::empty(), 4, EncodingKind::Flow).unwrap();
        let parity = vec![
            XorConstraint::new(vec![0, 3, 5], true).unwrap(),
            XorConstraint::new(vec![1, 2], false).unwrap(),
        ];
        let text = dump_problem(enc.n_vars(), &rows, &parity);
        let parsed = oracle::parse_dump(&text).unwrap();
        assert_eq!(parsed.n_vars, enc.n_vars());
        assert_eq!(parsed.linear, rows);
        assert_eq!(parsed.parity, parity);
    }
}
