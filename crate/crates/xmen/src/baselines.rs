//! Comparison methods that ignore (or only partially honor) the hard
//! constraints: classic maximum-entropy IRL via forward-backward
//! dynamic programming, importance-sampled IRL from a reference policy,
//! and a masked variant that deletes forbidden states before the DP.
//!
//! None of these see the combinatorial constraints during training or
//! generation (the masked variant sees single-state exclusions only),
//! which is exactly what makes them useful as contrast: their generated
//! trajectories reach the goal but violate multi-state constraints at
//! whatever rate the learned reward happens to produce.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{Constraint, ConstraintSet};
use crate::error::{Error, Result};
use crate::mdp::{path_feature, ActionId, FeatureMap, Mdp, ModelParams, StateId, Trajectory};

/// Expected visitation frequencies of the soft-optimal trajectory
/// distribution `∝ exp(−θᵀf(τ))·D(τ)` over goal-reaching paths of
/// length ≤ horizon.
#[derive(Debug, Clone)]
pub struct VisitationTable {
    pub horizon: usize,
    /// `values[t][s]`: partition of the paths that start at `s` at time
    /// `t` and reach the goal by the horizon (1 at the goal itself).
    pub values: Vec<Vec<f64>>,
    /// `state_freq[t][s]`: probability of occupying `s` at time `t`;
    /// mass stays at the goal once absorbed, so every layer sums to 1.
    pub state_freq: Vec<Vec<f64>>,
    /// `pair_freq[t][s][a]`: probability of taking `a` from `s` at `t`.
    pub pair_freq: Vec<Vec<Vec<f64>>>,
    /// Partition value at the start state: Σ_τ exp(−θᵀf(τ))·D(τ).
    pub partition: f64,
}

impl VisitationTable {
    /// E[f(τ)] under the table's distribution, with the same per-step
    /// discounting as [`path_feature`].
    pub fn expected_features(&self, fmap: &FeatureMap, discount: f64) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; fmap.dim()];
        for (t, layer) in self.pair_freq.iter().enumerate() {
            let w = discount.powi(t as i32 + 1);
            for (s, row) in layer.iter().enumerate() {
                for (a, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        let f = fmap.get(s, a)?;
                        for (acc_i, f_i) in acc.iter_mut().zip(f) {
                            *acc_i += w * p * f_i;
                        }
                    }
                }
            }
        }
        Ok(acc)
    }
}

/// Forward-backward dynamic programming for the unconstrained
/// soft-optimal distribution.
///
/// Backward pass: `values[t][s]` accumulates the weight of all
/// goal-reaching continuations, one step's weight being
/// `exp(−discountᵗ⁺¹·θᵀf(s,a))`. Forward pass: pushes the start
/// distribution through the posterior policy
/// `π_t(a|s) ∝ weight · E_{s′}[values[t+1][s′]]`, which conditions on
/// reaching the goal in time.
pub fn maxent_fb(
    mdp: &Mdp,
    fmap: &FeatureMap,
    theta: &ModelParams,
    horizon: usize,
) -> Result<VisitationTable> {
    let goal = mdp
        .goal()
        .ok_or_else(|| Error::Config("forward-backward needs a goal state".into()))?;
    if theta.dim() != fmap.dim() {
        return Err(Error::Config(format!(
            "parameter dimension {} does not match feature dimension {}",
            theta.dim(),
            fmap.dim()
        )));
    }
    let n = mdp.n_states();
    let discount = mdp.discount();
    let energy = |s: StateId, a: ActionId| -> Result<f64> {
        let f = fmap.get(s, a)?;
        Ok(theta.theta.iter().zip(f).map(|(t, fi)| t * fi).sum())
    };

    // backward
    let mut values = vec![vec![0.0f64; n]; horizon + 1];
    for layer in values.iter_mut() {
        layer[goal] = 1.0;
    }
    for s in 0..n {
        if s != goal {
            values[horizon][s] = 0.0;
        }
    }
    for t in (0..horizon).rev() {
        for s in 0..n {
            if s == goal {
                continue;
            }
            let mut z = 0.0;
            for a in mdp.available_actions(s) {
                let w = (-(discount.powi(t as i32 + 1)) * energy(s, a)?).exp();
                let succ: f64 = mdp
                    .successors(s, a)
                    .map(|sc| sc.iter().map(|&(s2, p)| p * values[t + 1][s2]).sum())
                    .unwrap_or(0.0);
                z += w * succ;
            }
            values[t][s] = z;
        }
    }

    // forward
    let mut state_freq = vec![vec![0.0f64; n]; horizon + 1];
    let mut pair_freq = vec![vec![vec![0.0f64; mdp.n_actions()]; n]; horizon];
    for (s, &d0) in mdp.initial().iter().enumerate() {
        state_freq[0][s] = d0;
    }
    for t in 0..horizon {
        // goal mass is absorbed and carried forward
        state_freq[t + 1][goal] += state_freq[t][goal];
        for s in 0..n {
            let mass = state_freq[t][s];
            if s == goal || mass <= 0.0 || values[t][s] <= 0.0 {
                continue;
            }
            for a in mdp.available_actions(s) {
                let w = (-(discount.powi(t as i32 + 1)) * energy(s, a)?).exp();
                let succ: f64 = mdp
                    .successors(s, a)
                    .map(|sc| sc.iter().map(|&(s2, p)| p * values[t + 1][s2]).sum())
                    .unwrap_or(0.0);
                let p_a = mass * w * succ / values[t][s];
                if p_a <= 0.0 {
                    continue;
                }
                pair_freq[t][s][a] = p_a;
                if let Some(sc) = mdp.successors(s, a) {
                    for &(s2, p) in sc {
                        if p > 0.0 && values[t + 1][s2] > 0.0 {
                            state_freq[t + 1][s2] += p_a * p * values[t + 1][s2] / succ;
                        }
                    }
                }
            }
        }
    }

    let partition = mdp
        .initial()
        .iter()
        .enumerate()
        .map(|(s, &d0)| d0 * values[0][s])
        .sum();
    Ok(VisitationTable { horizon, values, state_freq, pair_freq, partition })
}

/// Rolls out `n` trajectories from the DP-induced stochastic policy.
/// Every rollout reaches the goal (the policy conditions on it); no
/// constraint checking or rejection is applied.
pub fn policy_rollouts(
    mdp: &Mdp,
    fmap: &FeatureMap,
    theta: &ModelParams,
    horizon: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let table = maxent_fb(mdp, fmap, theta, horizon)?;
    if table.partition <= 0.0 {
        return Err(Error::Infeasible);
    }
    let goal = mdp.goal().expect("checked by maxent_fb");
    let discount = mdp.discount();
    let energy = |s: StateId, a: ActionId| -> f64 {
        let f = fmap.get(s, a).expect("validated dimensions");
        theta.theta.iter().zip(f).map(|(t, fi)| t * fi).sum()
    };
    let start = mdp
        .initial()
        .iter()
        .position(|&d| d > 0.0)
        .ok_or_else(|| Error::Config("empty initial distribution".into()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = start;
        let mut steps = Vec::new();
        let mut t = 0;
        while s != goal {
            // action posterior at (s, t)
            let mut options: Vec<(ActionId, f64)> = Vec::new();
            let mut total = 0.0;
            for a in mdp.available_actions(s) {
                let w = (-(discount.powi(t as i32 + 1)) * energy(s, a)).exp();
                let succ: f64 = mdp
                    .successors(s, a)
                    .map(|sc| sc.iter().map(|&(s2, p)| p * table.values[t + 1][s2]).sum())
                    .unwrap_or(0.0);
                let p = w * succ;
                if p > 0.0 {
                    options.push((a, p));
                    total += p;
                }
            }
            if options.is_empty() {
                return Err(Error::Infeasible);
            }
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = options[options.len() - 1].0;
            for &(a, p) in &options {
                if u < p {
                    chosen = a;
                    break;
                }
                u -= p;
            }
            // successor, weighted by transition × continuation value
            let sc = mdp.successors(s, chosen).expect("available action");
            let mut s_next = sc[sc.len() - 1].0;
            let total_s: f64 = sc
                .iter()
                .map(|&(s2, p)| p * table.values[t + 1][s2])
                .sum();
            let mut v = rng.gen::<f64>() * total_s;
            for &(s2, p) in sc {
                let mass = p * table.values[t + 1][s2];
                if v < mass {
                    s_next = s2;
                    break;
                }
                v -= mass;
            }
            steps.push((s, chosen));
            s = s_next;
            t += 1;
        }
        out.push(Trajectory { steps, terminal: goal });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training shells
// ---------------------------------------------------------------------------

/// Settings shared by the baseline trainers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Reference-policy rollouts per gradient step (importance-sampled
    /// trainer only).
    pub rollouts: usize,
    pub seed: u64,
    /// Wall-clock training budget; stops early with the average of the
    /// iterates completed so far.
    #[serde(default)]
    pub max_wall_seconds: Option<f64>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            iterations: 150,
            learning_rate: 0.2,
            rollouts: 512,
            seed: 0,
            max_wall_seconds: None,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and ≥ 0".into()));
        }
        if self.rollouts == 0 {
            return Err(Error::Config("rollouts must be at least 1".into()));
        }
        Ok(())
    }
}

/// A trained baseline: averaged and final iterates plus any non-fatal
/// diagnostics.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub theta_bar: ModelParams,
    pub theta_final: ModelParams,
    pub warnings: Vec<String>,
}

/// The descent shell every baseline shares: K steps of
/// `θ ← θ − η·g(θ, k)` with iterate averaging over θ_1..θ_K. Given
/// identical gradient values it produces identical iterate sequences,
/// whatever produced the gradients.
fn descend<G>(
    theta0: &ModelParams,
    iterations: usize,
    learning_rate: f64,
    max_wall_seconds: Option<f64>,
    mut gradient: G,
) -> Result<(ModelParams, ModelParams)>
where
    G: FnMut(&ModelParams, usize) -> Result<Vec<f64>>,
{
    let started = std::time::Instant::now();
    let mut theta = theta0.clone();
    let mut sum = vec![0.0; theta0.dim()];
    let mut completed = 0usize;
    for k in 1..=iterations {
        if let Some(budget) = max_wall_seconds {
            if k > 1 && started.elapsed().as_secs_f64() >= budget {
                break;
            }
        }
        let g = gradient(&theta, k)?;
        for (t, gi) in theta.theta.iter_mut().zip(&g) {
            *t -= learning_rate * gi;
        }
        for (s, t) in sum.iter_mut().zip(&theta.theta) {
            *s += t;
        }
        completed = k;
    }
    let bar = ModelParams::new(sum.iter().map(|s| s / completed.max(1) as f64).collect())?;
    Ok((bar, theta))
}

fn demo_feature_mean(demos: &[Trajectory], fmap: &FeatureMap, discount: f64) -> Result<Vec<f64>> {
    if demos.is_empty() {
        return Err(Error::Input("need at least one demonstration".into()));
    }
    let mut acc = vec![0.0; fmap.dim()];
    for t in demos {
        let f = path_feature(t, fmap, discount)?;
        for (a, fi) in acc.iter_mut().zip(&f) {
            *a += fi;
        }
    }
    for a in &mut acc {
        *a /= demos.len() as f64;
    }
    Ok(acc)
}

/// Classic maximum-entropy IRL: gradient descent on the unconstrained
/// objective, with the model expectation computed exactly by
/// forward-backward DP each step.
pub fn maxent_train(
    mdp: &Mdp,
    fmap: &FeatureMap,
    demos: &[Trajectory],
    cfg: &BaselineConfig,
    horizon: usize,
) -> Result<BaselineRun> {
    cfg.validate()?;
    let discount = mdp.discount();
    let demo_mean = demo_feature_mean(demos, fmap, discount)?;
    if maxent_fb(mdp, fmap, &ModelParams::zeros(fmap.dim()), horizon)?.partition <= 0.0 {
        return Err(Error::Infeasible);
    }
    let (theta_bar, theta_final) = descend(
        &ModelParams::zeros(fmap.dim()),
        cfg.iterations,
        cfg.learning_rate,
        cfg.max_wall_seconds,
        |theta, _| {
            let table = maxent_fb(mdp, fmap, theta, horizon)?;
            let model_mean = table.expected_features(fmap, discount)?;
            Ok(demo_mean.iter().zip(&model_mean).map(|(d, m)| d - m).collect())
        },
    )?;
    Ok(BaselineRun { theta_bar, theta_final, warnings: Vec::new() })
}

/// A time-dependent stochastic policy: probabilities over actions at
/// `(state, time)`. Probabilities must sum to 1 over the returned set.
pub type ReferencePolicy<'a> = dyn Fn(StateId, usize) -> Vec<(ActionId, f64)> + 'a;

/// Uniform-random over the actions available in each state — the
/// default reference for the importance-sampled trainer.
pub fn uniform_policy(mdp: &Mdp) -> impl Fn(StateId, usize) -> Vec<(ActionId, f64)> + '_ {
    move |s, _t| {
        let actions: Vec<ActionId> = mdp.available_actions(s).collect();
        let p = 1.0 / actions.len().max(1) as f64;
        actions.into_iter().map(|a| (a, p)).collect()
    }
}

/// One batch of reference-policy rollouts with self-normalized
/// importance weights `exp(−θᵀf(τ)) / Π π(a_t|s_t, t)`. Rollouts that
/// fail to reach the goal within the horizon carry zero target density
/// and are dropped.
struct WeightedRollouts {
    features: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn reference_rollouts<R: Rng>(
    mdp: &Mdp,
    fmap: &FeatureMap,
    theta: &ModelParams,
    reference: &ReferencePolicy,
    horizon: usize,
    n: usize,
    rng: &mut R,
) -> Result<WeightedRollouts> {
    let goal = mdp
        .goal()
        .ok_or_else(|| Error::Config("importance sampling needs a goal state".into()))?;
    let start = mdp
        .initial()
        .iter()
        .position(|&d| d > 0.0)
        .ok_or_else(|| Error::Config("empty initial distribution".into()))?;
    let discount = mdp.discount();
    let mut features = Vec::new();
    let mut weights = Vec::new();
    for _ in 0..n {
        let mut s = start;
        let mut steps = Vec::new();
        let mut log_q = 0.0;
        for t in 0..horizon {
            if s == goal {
                break;
            }
            let options = reference(s, t);
            if options.is_empty() {
                break;
            }
            let total: f64 = options.iter().map(|&(_, p)| p).sum();
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = options[options.len() - 1];
            for &(a, p) in &options {
                if u < p {
                    chosen = (a, p);
                    break;
                }
                u -= p;
            }
            log_q += (chosen.1 / total).ln();
            let sc = mdp
                .successors(s, chosen.0)
                .ok_or_else(|| Error::Config("reference policy chose an unavailable action".into()))?;
            let mut v = rng.gen::<f64>();
            let mut s_next = sc[sc.len() - 1].0;
            for &(s2, p) in sc {
                if v < p {
                    s_next = s2;
                    break;
                }
                v -= p;
            }
            steps.push((s, chosen.0));
            s = s_next;
        }
        if s != goal {
            continue; // zero target density
        }
        let traj = Trajectory { steps, terminal: goal };
        let f = path_feature(&traj, fmap, discount)?;
        let energy: f64 = theta.theta.iter().zip(&f).map(|(t, fi)| t * fi).sum();
        weights.push((-energy - log_q).exp());
        features.push(f);
    }
    Ok(WeightedRollouts { features, weights })
}

/// Importance-sampled IRL: the model expectation in the gradient is
/// estimated by self-normalized importance sampling from a reference
/// policy instead of exact DP. A batch whose effective sample size
/// collapses is retried with doubled size (with a warning); persistent
/// collapse is an error.
pub fn reirl_train(
    mdp: &Mdp,
    fmap: &FeatureMap,
    demos: &[Trajectory],
    cfg: &BaselineConfig,
    horizon: usize,
    reference: &ReferencePolicy,
) -> Result<BaselineRun> {
    cfg.validate()?;
    let discount = mdp.discount();
    let demo_mean = demo_feature_mean(demos, fmap, discount)?;
    let mut warnings = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (theta_bar, theta_final) = descend(
        &ModelParams::zeros(fmap.dim()),
        cfg.iterations,
        cfg.learning_rate,
        cfg.max_wall_seconds,
        |theta, k| {
            let mut n = cfg.rollouts;
            for _retry in 0..4 {
                let batch =
                    reference_rollouts(mdp, fmap, theta, reference, horizon, n, &mut rng)?;
                let sum_w: f64 = batch.weights.iter().sum();
                let sum_w2: f64 = batch.weights.iter().map(|w| w * w).sum();
                let ess = if sum_w2 > 0.0 { sum_w * sum_w / sum_w2 } else { 0.0 };
                if ess >= 2.0 {
                    let mut model_mean = vec![0.0; fmap.dim()];
                    for (f, w) in batch.features.iter().zip(&batch.weights) {
                        for (m, fi) in model_mean.iter_mut().zip(f) {
                            *m += w * fi;
                        }
                    }
                    for m in &mut model_mean {
                        *m /= sum_w;
                    }
                    return Ok(demo_mean
                        .iter()
                        .zip(&model_mean)
                        .map(|(d, m)| d - m)
                        .collect());
                }
                warnings.push(format!(
                    "iteration {k}: effective sample size {ess:.2} from {n} rollouts; retrying with more"
                ));
                n *= 2;
            }
            Err(Error::DegenerateBatch)
        },
    )?;
    Ok(BaselineRun { theta_bar, theta_final, warnings })
}

/// The environment with forbidden states carved out: no transitions
/// into them, no actions out of them. Constraints other than
/// [`Constraint::ForbiddenStates`] are ignored.
pub fn masked_mdp(mdp: &Mdp, cset: &ConstraintSet) -> Result<Mdp> {
    let mut forbidden = std::collections::BTreeSet::new();
    for c in cset.items() {
        if let Constraint::ForbiddenStates(set) = c {
            forbidden.extend(set.iter().copied());
        }
    }
    if let Some(goal) = mdp.goal() {
        if forbidden.contains(&goal) {
            return Err(Error::Infeasible);
        }
    }
    if mdp.initial().iter().enumerate().any(|(s, &d)| d > 0.0 && forbidden.contains(&s)) {
        return Err(Error::Infeasible);
    }
    let n = mdp.n_states();
    let mut transitions: Vec<Vec<Option<Vec<(StateId, f64)>>>> =
        vec![vec![None; mdp.n_actions()]; n];
    for s in 0..n {
        if forbidden.contains(&s) {
            continue;
        }
        for a in mdp.available_actions(s) {
            let sc = mdp.successors(s, a).expect("available action");
            if sc.iter().any(|&(s2, p)| p > 0.0 && forbidden.contains(&s2)) {
                continue;
            }
            transitions[s][a] = Some(sc.to_vec());
        }
    }
    Mdp::new(
        n,
        mdp.n_actions(),
        transitions,
        mdp.initial().to_vec(),
        mdp.discount(),
        mdp.goal(),
    )
}

/// [`maxent_train`] on the masked environment: forbidden states are
/// structurally unreachable, multi-state constraints stay invisible.
pub fn masked_maxent_train(
    mdp: &Mdp,
    fmap: &FeatureMap,
    demos: &[Trajectory],
    cfg: &BaselineConfig,
    horizon: usize,
    cset: &ConstraintSet,
) -> Result<BaselineRun> {
    let masked = masked_mdp(mdp, cset)?;
    maxent_train(&masked, fmap, demos, cfg, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::indicator;
    use crate::exact::{self, DEFAULT_ENUM_CAP};
    use crate::learner;
    use crate::mdp::{FeatureKind, GridAction, GridWorld, GridWorldSpec};

    fn grid(w: usize, h: usize, features: FeatureKind, discount: f64) -> GridWorld {
        GridWorld::build(GridWorldSpec {
            width: w,
            height: h,
            actions: vec![GridAction::Up, GridAction::Right],
            start: [0, 0],
            goal: [w - 1, h - 1],
            features,
            diag_cost: std::f64::consts::SQRT_2,
            discount,
        })
        .unwrap()
    }

    /// E_P[f] and partition from full enumeration, as the reference.
    fn enumeration_reference(
        gw: &GridWorld,
        theta: &ModelParams,
        horizon: usize,
    ) -> (Vec<f64>, f64) {
        let space =
            exact::enumerate(gw.mdp(), &ConstraintSet::empty(), horizon, DEFAULT_ENUM_CAP)
                .unwrap();
        let feats = space.path_features(gw.feature_map(), gw.mdp().discount()).unwrap();
        let weighted = space.weighted(&feats, theta);
        let mut mean = vec![0.0; gw.feature_map().dim()];
        for (f, w) in feats.iter().zip(&weighted.weights) {
            for (m, fi) in mean.iter_mut().zip(f) {
                *m += w / weighted.partition * fi;
            }
        }
        (mean, weighted.partition)
    }

    #[test]
    fn two_paths_split_evenly_at_zero_theta() {
        let gw = grid(2, 2, FeatureKind::Distance, 1.0);
        let table = maxent_fb(gw.mdp(), gw.feature_map(), &ModelParams::zeros(1), 2).unwrap();
        assert!((table.partition - 2.0).abs() < 1e-12);
        // both first actions leave the start with probability 1/2
        let first = &table.pair_freq[0][0];
        assert!((first[0] - 0.5).abs() < 1e-12);
        assert!((first[1] - 0.5).abs() < 1e-12);
        // every layer's state mass sums to one (goal mass retained)
        for layer in &table.state_freq {
            let total: f64 = layer.iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "layer mass {total}");
        }
    }

    #[test]
    fn fb_matches_enumeration_on_features_and_partition() {
        let gw = grid(3, 3, FeatureKind::PerCell, 1.0);
        let mut theta = vec![0.0; 9];
        theta[1] = 0.7;
        theta[4] = -0.4;
        theta[3] = 0.2;
        let params = ModelParams::new(theta).unwrap();
        let table = maxent_fb(gw.mdp(), gw.feature_map(), &params, 4).unwrap();
        let (exact_mean, exact_partition) = enumeration_reference(&gw, &params, 4);
        assert!(
            ((table.partition - exact_partition) / exact_partition).abs() < 1e-9,
            "partition {} vs {}",
            table.partition,
            exact_partition
        );
        let fb_mean = table.expected_features(gw.feature_map(), 1.0).unwrap();
        for (a, b) in fb_mean.iter().zip(&exact_mean) {
            assert!((a - b).abs() < 1e-9, "{fb_mean:?} vs {exact_mean:?}");
        }
    }

    #[test]
    fn fb_handles_discounted_energies() {
        let gw = grid(3, 3, FeatureKind::PerCell, 0.9);
        let mut theta = vec![0.0; 9];
        theta[1] = 0.5;
        theta[5] = -0.3;
        let params = ModelParams::new(theta).unwrap();
        let table = maxent_fb(gw.mdp(), gw.feature_map(), &params, 4).unwrap();
        let (exact_mean, exact_partition) = enumeration_reference(&gw, &params, 4);
        assert!(((table.partition - exact_partition) / exact_partition).abs() < 1e-9);
        let fb_mean = table.expected_features(gw.feature_map(), 0.9).unwrap();
        for (a, b) in fb_mean.iter().zip(&exact_mean) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn maxent_training_matches_demo_moments() {
        let gw = grid(3, 3, FeatureKind::PerCell, 1.0);
        let space =
            exact::enumerate(gw.mdp(), &ConstraintSet::empty(), 4, DEFAULT_ENUM_CAP).unwrap();
        let mut demos = space.trajectories.clone();
        demos.push(space.trajectories[2].clone());
        let cfg = BaselineConfig {
            iterations: 4000,
            learning_rate: 0.5,
            ..BaselineConfig::default()
        };
        let run = maxent_train(gw.mdp(), gw.feature_map(), &demos, &cfg, 4).unwrap();
        let table = maxent_fb(gw.mdp(), gw.feature_map(), &run.theta_final, 4).unwrap();
        let model_mean = table.expected_features(gw.feature_map(), 1.0).unwrap();
        let demo_mean = demo_feature_mean(&demos, gw.feature_map(), 1.0).unwrap();
        for (m, d) in model_mean.iter().zip(&demo_mean) {
            assert!((m - d).abs() < 1e-6, "moments not matched: {model_mean:?} vs {demo_mean:?}");
        }
    }

    #[test]
    fn unconstrained_maxent_agrees_with_the_exact_constrained_twin() {
        let gw = grid(3, 3, FeatureKind::PerCell, 1.0);
        let cset = ConstraintSet::empty();
        let space = exact::enumerate(gw.mdp(), &cset, 4, DEFAULT_ENUM_CAP).unwrap();
        let mut demos = space.trajectories.clone();
        demos.push(space.trajectories[0].clone());
        let cfg = BaselineConfig {
            iterations: 3000,
            learning_rate: 0.5,
            ..BaselineConfig::default()
        };
        let run = maxent_train(gw.mdp(), gw.feature_map(), &demos, &cfg, 4).unwrap();
        let twin = learner::minimize_nll_exact(
            gw.mdp(),
            gw.feature_map(),
            &cset,
            4,
            &demos,
            &ModelParams::zeros(9),
            0.5,
            20_000,
            1e-9,
        )
        .unwrap();
        // parameters need not be identical (features are redundant);
        // the achieved objective must be
        let nll_a =
            learner::nll_exact(&run.theta_final, &demos, gw.mdp(), &cset, gw.feature_map(), 4)
                .unwrap();
        let nll_b =
            learner::nll_exact(&twin.theta, &demos, gw.mdp(), &cset, gw.feature_map(), 4)
                .unwrap();
        assert!((nll_a - nll_b).abs() < 1e-4, "{nll_a} vs {nll_b}");
    }

    #[test]
    fn importance_sampled_gradient_agrees_with_enumeration() {
        let gw = grid(3, 3, FeatureKind::PerCell, 1.0);
        let space =
            exact::enumerate(gw.mdp(), &ConstraintSet::empty(), 4, DEFAULT_ENUM_CAP).unwrap();
        let demos = vec![space.trajectories[0].clone(), space.trajectories[4].clone()];
        let mut theta = vec![0.0; 9];
        theta[4] = 0.6;
        theta[2] = -0.3;
        let params = ModelParams::new(theta).unwrap();
        let exact_g = learner::exact_gradient(
            &params,
            &demos,
            gw.mdp(),
            &ConstraintSet::empty(),
            gw.feature_map(),
            4,
        )
        .unwrap();
        // repeated single-step estimates at fixed θ: compare the mean
        // against the exact gradient within Monte-Carlo confidence
        let reps = 10;
        let uniform = uniform_policy(gw.mdp());
        let mut estimates: Vec<Vec<f64>> = Vec::new();
        for rep in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + rep);
            let batch = reference_rollouts(
                gw.mdp(),
                gw.feature_map(),
                &params,
                &uniform,
                4,
                4000,
                &mut rng,
            )
            .unwrap();
            let sum_w: f64 = batch.weights.iter().sum();
            let mut model_mean = vec![0.0; 9];
            for (f, w) in batch.features.iter().zip(&batch.weights) {
                for (m, fi) in model_mean.iter_mut().zip(f) {
                    *m += w / sum_w * fi;
                }
            }
            let demo_mean = demo_feature_mean(&demos, gw.feature_map(), 1.0).unwrap();
            estimates.push(
                demo_mean.iter().zip(&model_mean).map(|(d, m)| d - m).collect(),
            );
        }
        for i in 0..9 {
            let mean: f64 = estimates.iter().map(|e| e[i]).sum::<f64>() / reps as f64;
            let var: f64 = estimates
                .iter()
                .map(|e| (e[i] - mean) * (e[i] - mean))
                .sum::<f64>()
                / (reps - 1) as f64;
            let se = (var / reps as f64).sqrt();
            assert!(
                (mean - exact_g[i]).abs() <= 4.0 * se + 1e-9,
                "component {i}: {mean} vs exact {} (se {se})",
                exact_g[i]
            );
        }
    }

    #[test]
    fn model_reference_makes_importance_weights_constant() {
        let gw = grid(3, 3, FeatureKind::PerCell, 1.0);
        let mut theta = vec![0.0; 9];
        theta[1] = 0.8;
        theta[3] = -0.5;
        let params = ModelParams::new(theta).unwrap();
        let horizon = 4;
        let table = maxent_fb(gw.mdp(), gw.feature_map(), &params, horizon).unwrap();
        let mdp = gw.mdp();
        let fmap = gw.feature_map();
        let discount = mdp.discount();
        let goal = mdp.goal().unwrap();
        let inner_params = params.clone();
        let model_policy = move |s: StateId, t: usize| -> Vec<(ActionId, f64)> {
            if s == goal || table.values[t][s] <= 0.0 {
                return Vec::new();
            }
            mdp.available_actions(s)
                .filter_map(|a| {
                    let f = fmap.get(s, a).unwrap();
                    let e: f64 = inner_params.theta.iter().zip(f).map(|(t2, fi)| t2 * fi).sum();
                    let w = (-(discount.powi(t as i32 + 1)) * e).exp();
                    let succ: f64 = mdp
                        .successors(s, a)
                        .map(|sc| {
                            sc.iter().map(|&(s2, p)| p * table.values[t + 1][s2]).sum()
                        })
                        .unwrap_or(0.0);
                    let p = w * succ / table.values[t][s];
                    (p > 0.0).then_some((a, p))
                })
                .collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = reference_rollouts(
            gw.mdp(),
            gw.feature_map(),
            &params,
            &model_policy,
            horizon,
            500,
            &mut rng,
        )
        .unwrap();
        assert_eq!(batch.weights.len(), 500, "model policy always reaches the goal");
        // proposal = target/Z makes every weight equal to Z
        let z = maxent_fb(gw.mdp(), gw.feature_map(), &params, horizon)
            .unwrap()
            .partition;
        for w in &batch.weights {
            assert!((w - z).abs() / z < 1e-9, "weight {w} vs partition {z}");
        }
    }

    #[test]
    fn masked_training_avoids_forbidden_states_and_matches_plain_maxent_without_them() {
        let gw = grid(4, 4, FeatureKind::PerCell, 1.0);
        let forbidden = gw.cell_id(1, 1).unwrap();
        let cset = ConstraintSet::new(
            vec![Constraint::ForbiddenStates([forbidden].into_iter().collect())],
            gw.mdp(),
        )
        .unwrap();
        let space = exact::enumerate(gw.mdp(), &cset, 6, DEFAULT_ENUM_CAP).unwrap();
        let demos: Vec<Trajectory> = space.trajectories[..4].to_vec();
        let cfg = BaselineConfig {
            iterations: 200,
            learning_rate: 0.3,
            ..BaselineConfig::default()
        };
        let run =
            masked_maxent_train(gw.mdp(), gw.feature_map(), &demos, &cfg, 6, &cset).unwrap();
        let masked = masked_mdp(gw.mdp(), &cset).unwrap();
        let rollouts =
            policy_rollouts(&masked, gw.feature_map(), &run.theta_final, 6, 200, 17).unwrap();
        for t in &rollouts {
            assert!(indicator(t, &cset), "masked rollout visited a forbidden state");
            assert_eq!(t.terminal, gw.goal_id());
        }
        // with no forbidden states the masked trainer is plain maxent
        let empty = ConstraintSet::empty();
        let a = masked_maxent_train(gw.mdp(), gw.feature_map(), &demos, &cfg, 6, &empty)
            .unwrap();
        let b = maxent_train(gw.mdp(), gw.feature_map(), &demos, &cfg, 6).unwrap();
        assert_eq!(a.theta_final.theta, b.theta_final.theta);
    }

    #[test]
    fn masking_that_disconnects_start_from_goal_is_infeasible() {
        let gw = grid(2, 2, FeatureKind::Distance, 1.0);
        let cset = ConstraintSet::new(
            vec![Constraint::ForbiddenStates([1, 2].into_iter().collect())],
            gw.mdp(),
        )
        .unwrap();
        let cfg = BaselineConfig::default();
        let space = exact::enumerate(gw.mdp(), &ConstraintSet::empty(), 2, DEFAULT_ENUM_CAP)
            .unwrap();
        let demos = vec![space.trajectories[0].clone()];
        assert!(matches!(
            masked_maxent_train(gw.mdp(), gw.feature_map(), &demos, &cfg, 2, &cset),
            Err(Error::Infeasible)
        ));
    }

    #[test]
    fn rollouts_reach_the_goal_within_the_horizon() {
        let gw = grid(4, 4, FeatureKind::Distance, 1.0);
        let rollouts =
            policy_rollouts(gw.mdp(), gw.feature_map(), &ModelParams::zeros(1), 6, 300, 3)
                .unwrap();
        assert_eq!(rollouts.len(), 300);
        for t in &rollouts {
            assert!(t.len() <= 6);
            assert_eq!(t.terminal, gw.goal_id());
            assert!(t.is_consistent(gw.mdp()));
        }
    }

    #[test]
    fn the_descent_shell_is_deterministic_in_its_gradients() {
        let theta0 = ModelParams::zeros(3);
        let fake = |theta: &ModelParams, k: usize| -> Result<Vec<f64>> {
            Ok(vec![
                theta.theta[0] * 0.5 + k as f64 * 0.01,
                -0.2,
                theta.theta[2] - 1.0,
            ])
        };
        let (bar_a, fin_a) = descend(&theta0, 20, 0.1, None, fake).unwrap();
        let (bar_b, fin_b) = descend(&theta0, 20, 0.1, None, fake).unwrap();
        assert_eq!(bar_a.theta, bar_b.theta);
        assert_eq!(fin_a.theta, fin_b.theta);
    }
}
