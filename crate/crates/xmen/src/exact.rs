//! Exhaustive desk-scale ground truth: enumerate every feasible
//! constrained trajectory, compute exact weights and the partition
//! function, sample exactly, and synthesize demonstration sets.
//!
//! This module exists to verify the sampling and learning machinery,
//! not to compete with it; it only works on instances small enough to
//! enumerate (default cap 2·10^6 trajectories).

use rand::Rng;

use crate::constraints::{indicator, Constraint, ConstraintSet};
use crate::error::{Error, Result};
use crate::mdp::{
    path_feature, transition_prob, FeatureMap, GridWorld, Mdp, ModelParams, StateId, Trajectory,
};

/// Default enumeration cap.
pub const DEFAULT_ENUM_CAP: usize = 2_000_000;

/// Every feasible trajectory with I_C = 1, together with its dynamics
/// probability D(τ).
#[derive(Debug, Clone)]
pub struct EnumeratedSpace {
    pub trajectories: Vec<Trajectory>,
    pub dprobs: Vec<f64>,
}

/// Per-trajectory weights e^{−θᵀf(τ)}·D(τ) and their sum.
#[derive(Debug, Clone)]
pub struct WeightedSpace {
    pub weights: Vec<f64>,
    pub partition: f64,
}

struct DfsFrame<'a> {
    mdp: &'a Mdp,
    cset: &'a ConstraintSet,
    horizon: usize,
    cap: usize,
    goal: StateId,
    out: Vec<Trajectory>,
    dprobs: Vec<f64>,
    steps: Vec<(StateId, usize)>,
}

impl<'a> DfsFrame<'a> {
    /// Cheap monotone violation checks before stepping from `cur` onto
    /// `next` (`cur` is not yet recorded in `steps`). A violated prefix
    /// can never be repaired by extension, so the branch dies. Pruning
    /// is conservative; the completed trajectory is re-checked by the
    /// full indicator either way.
    fn prefix_viable(&self, cur: StateId, next: StateId) -> bool {
        for c in self.cset.items() {
            match c {
                Constraint::ForbiddenStates(set) => {
                    if set.contains(&next) {
                        return false;
                    }
                }
                Constraint::ExactlyOneOf(set) => {
                    if set.contains(&next)
                        && self
                            .steps
                            .iter()
                            .map(|&(s, _)| s)
                            .chain([cur])
                            .any(|s| set.contains(&s) && s != next)
                    {
                        return false; // second distinct member
                    }
                }
                Constraint::Precedence { first, others } => {
                    if others.contains(&next)
                        && cur != *first
                        && !self.steps.iter().any(|&(s, _)| s == *first)
                    {
                        return false; // other-member reached before first
                    }
                }
                Constraint::MaxConsecutiveSameAction(_) => {} // handled on actions below
                _ => {}
            }
        }
        true
    }

    fn run_length_ok(&self, action: usize, limit: usize) -> bool {
        let mut run = 1;
        for &(_, a) in self.steps.iter().rev() {
            if a == action {
                run += 1;
            } else {
                break;
            }
        }
        run <= limit
    }

    fn dfs(&mut self, s: StateId, dprob: f64) -> Result<()> {
        if s == self.goal {
            let traj = Trajectory {
                steps: self.steps.clone(),
                terminal: s,
            };
            // order-dependent and global constraints checked on the
            // complete trajectory; eager pruning above is only an
            // optimization and must stay conservative
            if indicator(&traj, self.cset) {
                if self.out.len() >= self.cap {
                    return Err(Error::EnumerationOverflow { cap: self.cap });
                }
                self.out.push(traj);
                self.dprobs.push(dprob);
            }
            return Ok(());
        }
        if self.steps.len() >= self.horizon {
            return Ok(());
        }
        for a in 0..self.mdp.n_actions() {
            let Some(succ) = self.mdp.successors(s, a) else {
                continue;
            };
            if let Some(limit) = self.cset.items().iter().find_map(|c| match c {
                Constraint::MaxConsecutiveSameAction(l) => Some(*l),
                _ => None,
            }) {
                if !self.run_length_ok(a, limit) {
                    continue;
                }
            }
            let succ = succ.to_vec(); // release the borrow for recursion
            for (s2, p) in succ {
                if p <= 0.0 || !self.prefix_viable(s, s2) {
                    continue;
                }
                self.steps.push((s, a));
                self.dfs(s2, dprob * p)?;
                self.steps.pop();
            }
        }
        Ok(())
    }
}

/// Depth-first enumeration of all I_C-accepting goal-reaching
/// trajectories of length ≤ horizon.
pub fn enumerate(
    mdp: &Mdp,
    cset: &ConstraintSet,
    horizon: usize,
    cap: usize,
) -> Result<EnumeratedSpace> {
    let goal = mdp
        .goal()
        .ok_or_else(|| Error::Config("enumeration requires an MDP with a goal state".into()))?;
    let mut frame = DfsFrame {
        mdp,
        cset,
        horizon,
        cap,
        goal,
        out: Vec::new(),
        dprobs: Vec::new(),
        steps: Vec::new(),
    };
    for (start, &d0) in mdp.initial().iter().enumerate() {
        if d0 > 0.0 && frame.prefix_viable(start, start) {
            frame.dfs(start, d0)?;
        }
    }
    Ok(EnumeratedSpace {
        trajectories: frame.out,
        dprobs: frame.dprobs,
    })
}

impl EnumeratedSpace {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Precomputes f(τ) for every trajectory.
    pub fn path_features(&self, fmap: &FeatureMap, discount: f64) -> Result<Vec<Vec<f64>>> {
        self.trajectories
            .iter()
            .map(|t| path_feature(t, fmap, discount))
            .collect()
    }

    /// Weights e^{−θᵀf(τ)}·D(τ) given precomputed features.
    pub fn weighted(&self, features: &[Vec<f64>], theta: &ModelParams) -> WeightedSpace {
        let weights: Vec<f64> = features
            .iter()
            .zip(&self.dprobs)
            .map(|(f, &d)| {
                let energy: f64 = theta.theta.iter().zip(f).map(|(t, fi)| t * fi).sum();
                (-energy).exp() * d
            })
            .collect();
        let partition = weights.iter().sum();
        WeightedSpace { weights, partition }
    }
}

/// i.i.d. draws proportional to `weights`, by cumulative-sum inversion.
pub fn exact_sample(
    space: &EnumeratedSpace,
    weights: &WeightedSpace,
    rng: &mut impl Rng,
    n: usize,
) -> Result<Vec<Trajectory>> {
    if space.is_empty() || weights.partition <= 0.0 {
        return Err(Error::Infeasible);
    }
    let mut cumsum = Vec::with_capacity(space.len());
    let mut acc = 0.0;
    for &w in &weights.weights {
        acc += w;
        cumsum.push(acc);
    }
    let total = acc;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * total;
        let idx = match cumsum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i,
            Err(i) => i.min(space.len() - 1),
        };
        out.push(space.trajectories[idx].clone());
    }
    Ok(out)
}

/// Demonstration synthesis: with probability `mix.0` draw
/// weight-proportionally from the class the classifier accepts,
/// otherwise from its complement. Every output satisfies I_C because it
/// comes from the enumerated feasible space.
pub fn gen_demos(
    space: &EnumeratedSpace,
    weights: &WeightedSpace,
    classifier: impl Fn(&Trajectory) -> bool,
    mix: (f64, f64),
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>> {
    if (mix.0 + mix.1 - 1.0).abs() > 1e-9 || mix.0 < 0.0 || mix.1 < 0.0 {
        return Err(Error::Config(format!(
            "class mixture ({}, {}) must be a probability pair",
            mix.0, mix.1
        )));
    }
    let mut upper: Vec<usize> = Vec::new();
    let mut lower: Vec<usize> = Vec::new();
    for (i, t) in space.trajectories.iter().enumerate() {
        if classifier(t) {
            upper.push(i);
        } else {
            lower.push(i);
        }
    }
    if upper.is_empty() || lower.is_empty() {
        return Err(Error::Config(
            "demonstration classifier must split the space into two nonempty classes".into(),
        ));
    }
    let class_space = |idxs: &[usize]| -> (Vec<f64>, f64) {
        let w: Vec<f64> = idxs.iter().map(|&i| weights.weights[i]).collect();
        let z = w.iter().sum();
        (w, z)
    };
    let (w_up, z_up) = class_space(&upper);
    let (w_lo, z_lo) = class_space(&lower);
    if z_up <= 0.0 || z_lo <= 0.0 {
        return Err(Error::Config(
            "both demonstration classes need positive total weight".into(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (idxs, ws, z) = if rng.gen::<f64>() < mix.0 {
            (&upper, &w_up, z_up)
        } else {
            (&lower, &w_lo, z_lo)
        };
        let u: f64 = rng.gen::<f64>() * z;
        let mut acc = 0.0;
        let mut chosen = idxs[idxs.len() - 1];
        for (pos, &w) in ws.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = idxs[pos];
                break;
            }
        }
        out.push(space.trajectories[chosen].clone());
    }
    Ok(out)
}

/// The benchmark dichotomy: a trajectory is "upper" iff strictly more
/// than half of its visited cells (x, y) satisfy y > x; ties are lower.
pub fn upper_path_classifier(grid: &GridWorld) -> impl Fn(&Trajectory) -> bool + '_ {
    move |traj: &Trajectory| {
        let mut above = 0usize;
        let mut total = 0usize;
        for s in traj.visited() {
            let (x, y) = grid.cell_of(s);
            total += 1;
            if y > x {
                above += 1;
            }
        }
        2 * above > total
    }
}

/// Exact state-occupancy marginals of a weighted enumerated space:
/// per-state probability that a trajectory drawn from weights/partition
/// visits the state.
pub fn exact_occupancy(space: &EnumeratedSpace, weights: &WeightedSpace, n_states: usize) -> Vec<f64> {
    let mut occ = vec![0.0; n_states];
    for (traj, &w) in space.trajectories.iter().zip(&weights.weights) {
        let mut seen = vec![false; n_states];
        for s in traj.visited() {
            seen[s] = true;
        }
        for (s, &hit) in seen.iter().enumerate() {
            if hit {
                occ[s] += w;
            }
        }
    }
    for o in &mut occ {
        *o /= weights.partition;
    }
    occ
}

/// Consistency helper used across tests: D(τ) stored by enumeration
/// must match `transition_prob` recomputed from scratch.
pub fn verify_dprobs(space: &EnumeratedSpace, mdp: &Mdp) -> bool {
    space
        .trajectories
        .iter()
        .zip(&space.dprobs)
        .all(|(t, &d)| (transition_prob(t, mdp) - d).abs() <= 1e-12)
}
