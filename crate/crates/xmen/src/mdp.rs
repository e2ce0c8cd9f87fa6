//! Finite MDPs, gridworld builders, trajectories, and features.
//!
//! A trajectory τ = (s_1, a_1), ..., (s_L, a_L), s_{L+1} carries two
//! derived quantities used throughout the crate:
//!
//! * its path feature f(τ) = Σ_{t=1}^{L} γ^t f(s_t, a_t), and
//! * its dynamics probability D(τ) = d0(s_1) · Π_t T(s_{t+1} | s_t, a_t).
//!
//! The trajectory model is energy based: the unnormalized weight of τ
//! under parameters θ is exp(−θᵀ f(τ)) · D(τ), restricted to the
//! trajectories a constraint set admits. Lower energy means higher
//! probability, and gradient descent on θ descends the negative
//! log-likelihood under this convention.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};

pub type StateId = usize;
pub type ActionId = usize;

const DIST_TOL: f64 = 1e-9;

/// A finite Markov decision process with optional absorbing goal.
///
/// Transition rows and the initial distribution must each sum to 1
/// within 1e-9; the discount must lie in [0, 1]. Immutable after
/// construction.
#[derive(Debug, Clone)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// `transitions[s][a]` is `None` when action `a` is unavailable in `s`,
    /// otherwise a sparse distribution over successor states.
    transitions: Vec<Vec<Option<Vec<(StateId, f64)>>>>,
    initial: Vec<f64>,
    discount: f64,
    goal: Option<StateId>,
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Vec<Option<Vec<(StateId, f64)>>>>,
        initial: Vec<f64>,
        discount: f64,
        goal: Option<StateId>,
    ) -> Result<Self> {
        if transitions.len() != n_states {
            return Err(Error::Config(format!(
                "transition table has {} rows for {} states",
                transitions.len(),
                n_states
            )));
        }
        for (s, row) in transitions.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::Config(format!(
                    "state {s} has {} action slots for {} actions",
                    row.len(),
                    n_actions
                )));
            }
            for (a, dist) in row.iter().enumerate() {
                if let Some(dist) = dist {
                    let total: f64 = dist.iter().map(|&(_, p)| p).sum();
                    if (total - 1.0).abs() > DIST_TOL {
                        return Err(Error::Config(format!(
                            "transition row ({s},{a}) sums to {total}, expected 1"
                        )));
                    }
                    if dist.iter().any(|&(s2, p)| s2 >= n_states || p < 0.0) {
                        return Err(Error::Config(format!(
                            "transition row ({s},{a}) has an out-of-range state or negative mass"
                        )));
                    }
                }
            }
        }
        if initial.len() != n_states {
            return Err(Error::Config(format!(
                "initial distribution has {} entries for {} states",
                initial.len(),
                n_states
            )));
        }
        let init_total: f64 = initial.iter().sum();
        if (init_total - 1.0).abs() > DIST_TOL || initial.iter().any(|&p| p < 0.0) {
            return Err(Error::Config(format!(
                "initial distribution sums to {init_total}, expected 1"
            )));
        }
        if !(0.0..=1.0).contains(&discount) {
            return Err(Error::Config(format!(
                "discount {discount} outside [0, 1]"
            )));
        }
        if let Some(g) = goal {
            if g >= n_states {
                return Err(Error::Config(format!("goal state {g} out of range")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            initial,
            discount,
            goal,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn goal(&self) -> Option<StateId> {
        self.goal
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Actions available in `s`, in index order.
    pub fn available_actions(&self, s: StateId) -> impl Iterator<Item = ActionId> + '_ {
        self.transitions[s]
            .iter()
            .enumerate()
            .filter_map(|(a, d)| d.as_ref().map(|_| a))
    }

    pub fn is_available(&self, s: StateId, a: ActionId) -> bool {
        self.transitions[s][a].is_some()
    }

    /// Successor distribution of `(s, a)`, or `None` if unavailable.
    pub fn successors(&self, s: StateId, a: ActionId) -> Option<&[(StateId, f64)]> {
        self.transitions[s][a].as_deref()
    }

    /// Probability of reaching `s2` from `(s, a)`.
    pub fn transition(&self, s: StateId, a: ActionId, s2: StateId) -> f64 {
        match &self.transitions[s][a] {
            Some(dist) => dist
                .iter()
                .find(|&&(t, _)| t == s2)
                .map(|&(_, p)| p)
                .unwrap_or(0.0),
            None => 0.0,
        }
    }

    /// `Some(s')` when `(s, a)` has a single successor with probability 1.
    pub fn deterministic_successor(&self, s: StateId, a: ActionId) -> Option<StateId> {
        match &self.transitions[s][a] {
            Some(dist) if dist.len() == 1 && (dist[0].1 - 1.0).abs() <= DIST_TOL => {
                Some(dist[0].0)
            }
            _ => None,
        }
    }

    /// True when every available pair has exactly one successor.
    pub fn is_deterministic(&self) -> bool {
        (0..self.n_states).all(|s| {
            self.available_actions(s)
                .all(|a| self.deterministic_successor(s, a).is_some())
        })
    }

    /// The single start state, when the initial distribution is a point mass.
    pub fn point_start(&self) -> Option<StateId> {
        let mut start = None;
        for (s, &p) in self.initial.iter().enumerate() {
            if p > 0.0 {
                if (p - 1.0).abs() > DIST_TOL || start.is_some() {
                    return None;
                }
                start = Some(s);
            }
        }
        start
    }
}

/// An alternating state-action sequence plus its terminal state.
///
/// `steps[t] = (s_t, a_t)` and the state after the final action is
/// `terminal`. A length-0 trajectory (start equals goal) is legal and
/// visits only its terminal state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<(StateId, ActionId)>,
    pub terminal: StateId,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The first state of the trajectory (the terminal for length 0).
    pub fn start(&self) -> StateId {
        self.steps.first().map(|&(s, _)| s).unwrap_or(self.terminal)
    }

    /// Visited states in time order: s_1, ..., s_L, terminal.
    pub fn visited(&self) -> impl Iterator<Item = StateId> + '_ {
        self.steps
            .iter()
            .map(|&(s, _)| s)
            .chain(std::iter::once(self.terminal))
    }

    /// Actions in time order.
    pub fn actions(&self) -> impl Iterator<Item = ActionId> + '_ {
        self.steps.iter().map(|&(_, a)| a)
    }

    /// Checks structural validity against an MDP: every step must be an
    /// available action whose successor has positive probability, with
    /// consecutive states chained together.
    pub fn is_consistent(&self, mdp: &Mdp) -> bool {
        for (i, &(s, a)) in self.steps.iter().enumerate() {
            let next = self
                .steps
                .get(i + 1)
                .map(|&(s2, _)| s2)
                .unwrap_or(self.terminal);
            if s >= mdp.n_states() || a >= mdp.n_actions() || mdp.transition(s, a, next) <= 0.0 {
                return false;
            }
        }
        true
    }
}

/// Per-pair feature vectors f(s, a), all of one dimension.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    dim: usize,
    n_actions: usize,
    table: Vec<Option<Vec<f64>>>,
}

impl FeatureMap {
    pub fn new(n_states: usize, n_actions: usize, dim: usize) -> Self {
        Self {
            dim,
            n_actions,
            table: vec![None; n_states * n_actions],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn set(&mut self, s: StateId, a: ActionId, features: Vec<f64>) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::Config(format!(
                "feature vector for ({s},{a}) has length {}, expected {}",
                features.len(),
                self.dim
            )));
        }
        self.table[s * self.n_actions + a] = Some(features);
        Ok(())
    }

    pub fn get(&self, s: StateId, a: ActionId) -> Result<&[f64]> {
        self.table
            .get(s * self.n_actions + a)
            .and_then(|v| v.as_deref())
            .ok_or_else(|| Error::Config(format!("no feature entry for pair ({s},{a})")))
    }
}

/// Reward parameters θ. Entries must be finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: Vec<f64>,
}

impl ModelParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("parameter vector has non-finite entries".into()));
        }
        Ok(Self { theta })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            theta: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// f(τ) = Σ_{t=1}^{L} discount^t · f(s_t, a_t).
///
/// The summation index starts at t = 1, so the first step is already
/// discounted once. An empty trajectory yields the zero vector.
pub fn path_feature(traj: &Trajectory, fmap: &FeatureMap, discount: f64) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; fmap.dim()];
    let mut weight = 1.0;
    for &(s, a) in &traj.steps {
        weight *= discount;
        let f = fmap.get(s, a)?;
        for (acc_i, f_i) in acc.iter_mut().zip(f) {
            *acc_i += weight * f_i;
        }
    }
    Ok(acc)
}

/// D(τ) = d0(s_1) · Π_t T(s_{t+1} | s_t, a_t).
///
/// An impossible step yields 0 rather than an error, signaling an
/// infeasible trajectory. For a length-0 trajectory this is d0 of the
/// terminal state.
pub fn transition_prob(traj: &Trajectory, mdp: &Mdp) -> f64 {
    let start = traj.start();
    if start >= mdp.n_states() {
        return 0.0;
    }
    let mut p = mdp.initial()[start];
    for (i, &(s, a)) in traj.steps.iter().enumerate() {
        let next = traj
            .steps
            .get(i + 1)
            .map(|&(s2, _)| s2)
            .unwrap_or(traj.terminal);
        if s >= mdp.n_states() || a >= mdp.n_actions() {
            return 0.0;
        }
        p *= mdp.transition(s, a, next);
        if p == 0.0 {
            return 0.0;
        }
    }
    p
}

/// θᵀ f(τ). The unnormalized trajectory weight is exp(−energy).
pub fn trajectory_energy(
    traj: &Trajectory,
    params: &ModelParams,
    fmap: &FeatureMap,
    discount: f64,
) -> Result<f64> {
    if params.dim() != fmap.dim() {
        return Err(Error::Config(format!(
            "parameter dimension {} does not match feature dimension {}",
            params.dim(),
            fmap.dim()
        )));
    }
    let f = path_feature(traj, fmap, discount)?;
    Ok(params.theta.iter().zip(&f).map(|(t, fi)| t * fi).sum())
}

/// Grid actions. The diagonal moves one step up and one step right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridAction {
    #[serde(rename = "up")]
    Up,
    #[serde(rename = "right")]
    Right,
    #[serde(rename = "diag")]
    DiagUpRight,
}

impl GridAction {
    /// (dx, dy) displacement.
    pub fn delta(self) -> (usize, usize) {
        match self {
            GridAction::Up => (0, 1),
            GridAction::Right => (1, 0),
            GridAction::DiagUpRight => (1, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GridAction::Up => "up",
            GridAction::Right => "right",
            GridAction::DiagUpRight => "diag",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "up" => Some(GridAction::Up),
            "right" => Some(GridAction::Right),
            "diag" => Some(GridAction::DiagUpRight),
            _ => None,
        }
    }
}

impl fmt::Display for GridAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which per-pair features the gridworld carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// One dimension: the Euclidean step cost.
    #[serde(rename = "distance")]
    Distance,
    /// One indicator dimension per cell, set for the step's source cell.
    #[serde(rename = "per-cell")]
    PerCell,
    /// Distance first, then the per-cell indicators.
    #[serde(rename = "both")]
    Both,
}

fn default_diag_cost() -> f64 {
    std::f64::consts::SQRT_2
}

fn default_discount() -> f64 {
    1.0
}

/// Declarative gridworld description, loadable from JSON:
///
/// ```json
/// {"width":9,"height":9,"actions":["up","right","diag"],
///  "start":[0,0],"goal":[8,8],"features":"distance"}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridWorldSpec {
    pub width: usize,
    pub height: usize,
    pub actions: Vec<GridAction>,
    pub start: [usize; 2],
    pub goal: [usize; 2],
    pub features: FeatureKind,
    /// Cost of the diagonal step in the distance feature.
    #[serde(default = "default_diag_cost")]
    pub diag_cost: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

impl GridWorldSpec {
    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("grid width and height must be positive".into()));
        }
        if self.actions.is_empty() {
            return Err(Error::Config("gridworld action set is empty".into()));
        }
        for (name, cell) in [("start", self.start), ("goal", self.goal)] {
            if cell[0] >= self.width || cell[1] >= self.height {
                return Err(Error::Config(format!(
                    "{name} cell ({}, {}) outside the {}x{} grid",
                    cell[0], cell[1], self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

/// A gridworld: its [`GridWorldSpec`], its deterministic MDP, its
/// features, and the cell ↔ state-id mapping.
///
/// Cells are (x, y) with x growing rightward and y growing upward;
/// state ids are `y * width + x`. Actions that would exit the grid are
/// unavailable, and the goal cell is absorbing (it offers no actions).
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: GridWorldSpec,
    mdp: Mdp,
    features: FeatureMap,
}

impl GridWorld {
    pub fn build(spec: GridWorldSpec) -> Result<Self> {
        spec.validate()?;
        let n_states = spec.width * spec.height;
        let n_actions = spec.actions.len();
        let goal = spec.goal[1] * spec.width + spec.goal[0];
        let start = spec.start[1] * spec.width + spec.start[0];

        let dim = match spec.features {
            FeatureKind::Distance => 1,
            FeatureKind::PerCell => n_states,
            FeatureKind::Both => 1 + n_states,
        };
        let mut features = FeatureMap::new(n_states, n_actions, dim);
        let mut transitions: Vec<Vec<Option<Vec<(StateId, f64)>>>> =
            vec![vec![None; n_actions]; n_states];

        for y in 0..spec.height {
            for x in 0..spec.width {
                let s = y * spec.width + x;
                if s == goal {
                    continue; // absorbing: no actions out of the goal
                }
                for (a, &act) in spec.actions.iter().enumerate() {
                    let (dx, dy) = act.delta();
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= spec.width || ny >= spec.height {
                        continue; // would exit the grid
                    }
                    let s2 = ny * spec.width + nx;
                    transitions[s][a] = Some(vec![(s2, 1.0)]);
                    let cost = match act {
                        GridAction::DiagUpRight => spec.diag_cost,
                        _ => 1.0,
                    };
                    let mut f = Vec::with_capacity(dim);
                    match spec.features {
                        FeatureKind::Distance => f.push(cost),
                        FeatureKind::PerCell => {
                            f.resize(n_states, 0.0);
                            f[s] = 1.0;
                        }
                        FeatureKind::Both => {
                            f.push(cost);
                            f.resize(1 + n_states, 0.0);
                            f[1 + s] = 1.0;
                        }
                    }
                    features.set(s, a, f)?;
                }
            }
        }

        let mut initial = vec![0.0; n_states];
        initial[start] = 1.0;
        let mdp = Mdp::new(
            n_states,
            n_actions,
            transitions,
            initial,
            spec.discount,
            Some(goal),
        )?;
        Ok(Self {
            spec,
            mdp,
            features,
        })
    }

    pub fn spec(&self) -> &GridWorldSpec {
        &self.spec
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.features
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn cell_id(&self, x: usize, y: usize) -> Result<StateId> {
        if x >= self.spec.width || y >= self.spec.height {
            return Err(Error::Input(format!(
                "cell ({x}, {y}) outside the {}x{} grid",
                self.spec.width, self.spec.height
            )));
        }
        Ok(y * self.spec.width + x)
    }

    pub fn cell_of(&self, s: StateId) -> (usize, usize) {
        (s % self.spec.width, s / self.spec.width)
    }

    pub fn start_id(&self) -> StateId {
        self.spec.start[1] * self.spec.width + self.spec.start[0]
    }

    pub fn goal_id(&self) -> StateId {
        self.spec.goal[1] * self.spec.width + self.spec.goal[0]
    }

    /// The longest monotone path length, used as the default horizon.
    pub fn default_horizon(&self) -> usize {
        (self.spec.width - 1) + (self.spec.height - 1)
    }

    /// BFS distance from start to goal in steps, if reachable.
    pub fn min_steps_to_goal(&self) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.mdp.n_states()];
        let mut queue = VecDeque::new();
        let start = self.start_id();
        dist[start] = 0;
        queue.push_back(start);
        while let Some(s) = queue.pop_front() {
            if s == self.goal_id() {
                return Some(dist[s]);
            }
            for a in self.mdp.available_actions(s) {
                if let Some(s2) = self.mdp.deterministic_successor(s, a) {
                    if dist[s2] == usize::MAX {
                        dist[s2] = dist[s] + 1;
                        queue.push_back(s2);
                    }
                }
            }
        }
        None
    }

    /// Serializes a trajectory to the JSONL line format
    /// `{"states":[[x,y],...],"actions":["up",...]}`.
    pub fn trajectory_to_record(&self, traj: &Trajectory) -> TrajectoryRecord {
        TrajectoryRecord {
            states: traj.visited().map(|s| {
                let (x, y) = self.cell_of(s);
                [x, y]
            }).collect(),
            actions: traj
                .actions()
                .map(|a| self.spec.actions[a].name().to_string())
                .collect(),
        }
    }

    /// Parses a JSONL record back into a trajectory, checking that the
    /// states chain together under this grid's actions.
    pub fn trajectory_from_record(&self, rec: &TrajectoryRecord) -> Result<Trajectory> {
        if rec.states.len() != rec.actions.len() + 1 {
            return Err(Error::Input(format!(
                "trajectory record has {} states and {} actions; expected one more state",
                rec.states.len(),
                rec.actions.len()
            )));
        }
        let ids: Vec<StateId> = rec
            .states
            .iter()
            .map(|&[x, y]| self.cell_id(x, y))
            .collect::<Result<_>>()?;
        let mut steps = Vec::with_capacity(rec.actions.len());
        for (i, name) in rec.actions.iter().enumerate() {
            let act = GridAction::from_name(name)
                .ok_or_else(|| Error::Input(format!("unknown action name {name:?}")))?;
            let a = self
                .spec
                .actions
                .iter()
                .position(|&x| x == act)
                .ok_or_else(|| Error::Input(format!("action {name:?} not in this grid's action set")))?;
            let s = ids[i];
            if self.mdp.deterministic_successor(s, a) != Some(ids[i + 1]) {
                return Err(Error::Input(format!(
                    "step {i}: action {name:?} does not lead from {:?} to {:?}",
                    rec.states[i],
                    rec.states[i + 1]
                )));
            }
            steps.push((s, a));
        }
        Ok(Trajectory {
            steps,
            terminal: *ids.last().expect("at least one state"),
        })
    }
}

/// One JSONL line of trajectory output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TrajectoryRecord {
    pub states: Vec<[usize; 2]>,
    pub actions: Vec<String>,
}

/// Builds the MDP and feature map for a gridworld spec.
pub fn build_gridworld(spec: GridWorldSpec) -> Result<(Mdp, FeatureMap)> {
    let gw = GridWorld::build(spec)?;
    Ok((gw.mdp, gw.features))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(width: usize, height: usize, actions: Vec<GridAction>) -> GridWorld {
        GridWorld::build(GridWorldSpec {
            width,
            height,
            actions,
            start: [0, 0],
            goal: [width - 1, height - 1],
            features: FeatureKind::Distance,
            diag_cost: default_diag_cost(),
            discount: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn gridworld_9x9_has_81_states() {
        let gw = grid(
            9,
            9,
            vec![GridAction::Up, GridAction::Right, GridAction::DiagUpRight],
        );
        assert_eq!(gw.mdp().n_states(), 81);
        // interior out-degree 3, boundary cells lose exiting actions
        let interior = gw.cell_id(4, 4).unwrap();
        assert_eq!(gw.mdp().available_actions(interior).count(), 3);
        let top_edge = gw.cell_id(4, 8).unwrap();
        assert_eq!(gw.mdp().available_actions(top_edge).count(), 1); // only right
        let goal = gw.goal_id();
        assert_eq!(gw.mdp().available_actions(goal).count(), 0); // absorbing
    }

    #[test]
    fn path_feature_empty_is_zero() {
        let gw = grid(3, 3, vec![GridAction::Up, GridAction::Right]);
        let traj = Trajectory {
            steps: vec![],
            terminal: gw.start_id(),
        };
        assert_eq!(
            path_feature(&traj, gw.feature_map(), 0.9).unwrap(),
            vec![0.0]
        );
    }

    #[test]
    fn path_feature_plain_sum_at_discount_one() {
        // two steps with hand-set features (1,0) and (0,2)
        let mut fmap = FeatureMap::new(3, 1, 2);
        fmap.set(0, 0, vec![1.0, 0.0]).unwrap();
        fmap.set(1, 0, vec![0.0, 2.0]).unwrap();
        let traj = Trajectory {
            steps: vec![(0, 0), (1, 0)],
            terminal: 2,
        };
        assert_eq!(path_feature(&traj, &fmap, 1.0).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn path_feature_discounted_matches_independent_accumulation() {
        // 9x9 grid demo path, discount 0.9; checked against a separately
        // written per-step accumulation.
        let gw = grid(
            9,
            9,
            vec![GridAction::Up, GridAction::Right, GridAction::DiagUpRight],
        );
        let names = ["diag", "up", "right", "diag", "right", "up", "diag", "right", "up", "diag", "right", "up"];
        let mut steps = Vec::new();
        let (mut x, mut y) = (0usize, 0usize);
        for name in names {
            let act = GridAction::from_name(name).unwrap();
            let a = gw.spec().actions.iter().position(|&g| g == act).unwrap();
            steps.push((gw.cell_id(x, y).unwrap(), a));
            let (dx, dy) = act.delta();
            x += dx;
            y += dy;
        }
        let traj = Trajectory {
            steps,
            terminal: gw.cell_id(x, y).unwrap(),
        };
        assert_eq!((x, y), (8, 8));

        // independent oracle: fold the cost sequence directly
        let mut expected = 0.0;
        let mut w = 1.0;
        for name in names {
            w *= 0.9;
            expected += w * if name == "diag" { std::f64::consts::SQRT_2 } else { 1.0 };
        }
        let got = path_feature(&traj, gw.feature_map(), 0.9).unwrap();
        assert!((got[0] - expected).abs() < 1e-12, "{} vs {expected}", got[0]);
    }

    #[test]
    fn path_feature_additive_under_concatenation_at_discount_one() {
        let gw = grid(4, 4, vec![GridAction::Up, GridAction::Right]);
        let id = |x, y| gw.cell_id(x, y).unwrap();
        let first = Trajectory {
            steps: vec![(id(0, 0), 1), (id(1, 0), 0)],
            terminal: id(1, 1),
        };
        let second = Trajectory {
            steps: vec![(id(1, 1), 1), (id(2, 1), 0), (id(2, 2), 1)],
            terminal: id(3, 2),
        };
        let mut joined = first.clone();
        joined.steps.extend(second.steps.iter().copied());
        joined.terminal = second.terminal;

        let f1 = path_feature(&first, gw.feature_map(), 1.0).unwrap();
        let f2 = path_feature(&second, gw.feature_map(), 1.0).unwrap();
        let fj = path_feature(&joined, gw.feature_map(), 1.0).unwrap();
        for i in 0..f1.len() {
            assert!((f1[i] + f2[i] - fj[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_prob_deterministic_path_is_one() {
        let gw = grid(3, 3, vec![GridAction::Up, GridAction::Right]);
        let id = |x, y| gw.cell_id(x, y).unwrap();
        let traj = Trajectory {
            steps: vec![(id(0, 0), 1), (id(1, 0), 0), (id(1, 1), 1), (id(2, 1), 0)],
            terminal: id(2, 2),
        };
        assert_eq!(transition_prob(&traj, gw.mdp()), 1.0);
        assert!(traj.is_consistent(gw.mdp()));
    }

    #[test]
    fn transition_prob_impossible_step_is_zero() {
        let gw = grid(3, 3, vec![GridAction::Up, GridAction::Right]);
        let id = |x, y| gw.cell_id(x, y).unwrap();
        // claims Up from (0,0) lands at (2,2)
        let traj = Trajectory {
            steps: vec![(id(0, 0), 0)],
            terminal: id(2, 2),
        };
        assert_eq!(transition_prob(&traj, gw.mdp()), 0.0);
        assert!(!traj.is_consistent(gw.mdp()));
    }

    #[test]
    fn transition_prob_stochastic_chain_hand_product() {
        // 2-state MDP with a 0.7/0.3 slip on its single action; a 3-step
        // path stay-stay-move has probability 0.7 * 0.7 * 0.3 by hand.
        let transitions = vec![
            vec![Some(vec![(0, 0.7), (1, 0.3)])],
            vec![None],
        ];
        let mdp = Mdp::new(2, 1, transitions, vec![1.0, 0.0], 1.0, Some(1)).unwrap();
        let traj = Trajectory {
            steps: vec![(0, 0), (0, 0), (0, 0)],
            terminal: 1,
        };
        let got = transition_prob(&traj, &mdp);
        assert!((got - 0.7 * 0.7 * 0.3).abs() < 1e-15);
    }

    #[test]
    fn energy_zero_theta_gives_unit_weight() {
        let gw = grid(3, 3, vec![GridAction::Up, GridAction::Right]);
        let id = |x, y| gw.cell_id(x, y).unwrap();
        let traj = Trajectory {
            steps: vec![(id(0, 0), 0)],
            terminal: id(0, 1),
        };
        let theta = ModelParams::zeros(1);
        let e = trajectory_energy(&traj, &theta, gw.feature_map(), 1.0).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!((-e).exp(), 1.0);
    }

    #[test]
    fn energy_one_dimensional_arithmetic() {
        let mut fmap = FeatureMap::new(2, 1, 1);
        fmap.set(0, 0, vec![3.0]).unwrap();
        let traj = Trajectory {
            steps: vec![(0, 0)],
            terminal: 1,
        };
        let theta = ModelParams::new(vec![1.0]).unwrap();
        let e = trajectory_energy(&traj, &theta, &fmap, 1.0).unwrap();
        assert!((e - 3.0).abs() < 1e-15);
        assert!(((-e).exp() - (-3.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn energy_dimension_mismatch_rejected() {
        let fmap = FeatureMap::new(2, 1, 1);
        let traj = Trajectory {
            steps: vec![],
            terminal: 0,
        };
        let theta = ModelParams::new(vec![1.0, 2.0]).unwrap();
        assert!(trajectory_energy(&traj, &theta, &fmap, 1.0).is_err());
    }

    #[test]
    fn degenerate_grid_rejected() {
        let err = GridWorld::build(GridWorldSpec {
            width: 0,
            height: 3,
            actions: vec![GridAction::Up],
            start: [0, 0],
            goal: [0, 2],
            features: FeatureKind::Distance,
            diag_cost: default_diag_cost(),
            discount: 1.0,
        });
        assert!(err.is_err());
    }

    #[test]
    fn spec_parses_from_documented_json() {
        let json = r#"{"width":9,"height":9,"actions":["up","right","diag"],
                       "start":[0,0],"goal":[8,8],"features":"distance"}"#;
        let spec: GridWorldSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.width, 9);
        assert_eq!(spec.actions, vec![GridAction::Up, GridAction::Right, GridAction::DiagUpRight]);
        assert!((spec.diag_cost - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(spec.discount, 1.0);
        let gw = GridWorld::build(spec).unwrap();
        assert_eq!(gw.mdp().n_states(), 81);
    }

    #[test]
    fn trajectory_jsonl_round_trip() {
        let gw = grid(3, 3, vec![GridAction::Up, GridAction::Right]);
        let id = |x, y| gw.cell_id(x, y).unwrap();
        let traj = Trajectory {
            steps: vec![(id(0, 0), 1), (id(1, 0), 0), (id(1, 1), 0), (id(1, 2), 1)],
            terminal: id(2, 2),
        };
        let rec = gw.trajectory_to_record(&traj);
        let line = serde_json::to_string(&rec).unwrap();
        let parsed: TrajectoryRecord = serde_json::from_str(&line).unwrap();
        let back = gw.trajectory_from_record(&parsed).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn mdp_validation_catches_bad_rows() {
        let transitions = vec![vec![Some(vec![(0, 0.5), (1, 0.4)])], vec![None]];
        assert!(Mdp::new(2, 1, transitions, vec![1.0, 0.0], 1.0, None).is_err());
        let transitions = vec![vec![Some(vec![(0, 1.0)])], vec![None]];
        assert!(Mdp::new(2, 1, transitions, vec![0.9, 0.0], 1.0, None).is_err());
        let transitions = vec![vec![Some(vec![(0, 1.0)])], vec![None]];
        assert!(Mdp::new(2, 1, transitions, vec![1.0, 0.0], 1.5, None).is_err());
    }
}
