//! Stochastic training loop: ratio gradient estimation from sampled
//! trajectory batches, SGD with iterate averaging, and exact-gradient
//! twins for verification on enumerable instances.
//!
//! The objective is the negative log-likelihood of the demonstrations
//! under `P(τ|θ) ∝ exp(−θᵀf(τ)) · D(τ)` restricted to the
//! constraint-satisfying set, where `D` is the environment's transition
//! probability. Its gradient is a difference of feature expectations,
//! `E_demo[f] − E_P[f]`; the model side is estimated from parity-hashed
//! samples by a ratio of two independent half-batches, which corrects
//! for the sampler drawing from `∝ exp(−θᵀf)` without the `D` factor.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{indicator, ConstraintSet};
use crate::encoding::encode;
use crate::error::{Error, Result};
use crate::exact::{self, DEFAULT_ENUM_CAP};
use crate::mdp::{path_feature, transition_prob, FeatureMap, Mdp, ModelParams, Trajectory};
use crate::oracle::{OracleStats, SolverConfig};
use crate::sampler::{batch_sample, mix64, SamplerConfig, SamplerContext};

/// Settings for one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Gradient steps (the returned parameters average this many
    /// iterates).
    pub iterations: usize,
    /// Step size. Zero is allowed — the loop then merely measures
    /// gradients without moving.
    pub learning_rate: f64,
    /// Demonstrations drawn (uniformly, with replacement) per step.
    pub demo_batch: usize,
    /// Half-batch size for the ratio estimator; each step samples
    /// `2·model_batch` trajectories from the current model.
    pub model_batch: usize,
    pub sampler: SamplerConfig,
    pub seed: u64,
    /// Known variance bounds (demo-side, model-side) for the
    /// learning-rate guard; estimated from data when absent.
    #[serde(default)]
    pub variance_bounds: Option<(f64, f64)>,
    /// Record the exact negative log-likelihood each iteration
    /// (enumerates the trajectory space — small instances only).
    #[serde(default)]
    pub track_exact_nll: bool,
    /// Per-solve resource limits for the embedded solver.
    #[serde(default)]
    pub solver: SolverConfig,
    /// Wall-clock training budget. When it runs out the loop stops
    /// early and returns the average of the iterates completed so far,
    /// with a warning recorded.
    #[serde(default)]
    pub max_wall_seconds: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.demo_batch == 0 || self.model_batch == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        self.sampler.validate()?;
        // the averaged-iterate convergence bound needs δ² < 2; enforce
        // it here rather than in the sampler, which is also useful
        // stand-alone at larger δ
        if self.sampler.delta > std::f64::consts::SQRT_2 + 1e-12 {
            return Err(Error::Config(format!(
                "training requires delta ≤ √2, got {}",
                self.sampler.delta
            )));
        }
        Ok(())
    }
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub grad_norm: f64,
    /// Cumulative oracle queries after this iteration.
    pub queries: u64,
    pub wall_ms: u128,
    pub exact_nll: Option<f64>,
}

/// Evolving state of a training run; returned alongside the averaged
/// parameters for inspection.
#[derive(Debug)]
pub struct TrainState {
    /// Final iterate θ_K (not the average).
    pub theta_k: ModelParams,
    /// Running sum of the iterates θ_1..θ_K.
    pub iterate_sum: Vec<f64>,
    /// Completed iterations.
    pub k: usize,
    /// Oracle counters accumulated across all sampling.
    pub stats: OracleStats,
    /// Exact NLL per iteration when tracking is enabled.
    pub loss_trace: Option<Vec<f64>>,
    pub trace: Vec<TraceRow>,
    /// Non-fatal diagnostics (learning-rate guard and friends).
    pub warnings: Vec<String>,
    /// (σ̂1², σ̂2²): demo- and model-side total feature variances used
    /// by the learning-rate guard.
    pub variance_estimates: Option<(f64, f64)>,
}

// ---------------------------------------------------------------------------
// Gradient estimation
// ---------------------------------------------------------------------------

fn mean_feature(trajs: &[Trajectory], fmap: &FeatureMap, discount: f64) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; fmap.dim()];
    for t in trajs {
        let f = path_feature(t, fmap, discount)?;
        for (a, fi) in acc.iter_mut().zip(&f) {
            *a += fi;
        }
    }
    for a in &mut acc {
        *a /= trajs.len() as f64;
    }
    Ok(acc)
}

/// Total variance (trace of the covariance) of the path features.
fn feature_variance(trajs: &[Trajectory], fmap: &FeatureMap, discount: f64) -> Result<f64> {
    let mean = mean_feature(trajs, fmap, discount)?;
    let mut total = 0.0;
    for t in trajs {
        let f = path_feature(t, fmap, discount)?;
        total += f
            .iter()
            .zip(&mean)
            .map(|(fi, m)| (fi - m) * (fi - m))
            .sum::<f64>();
    }
    Ok(total / trajs.len() as f64)
}

/// Ratio gradient estimate from one demonstration batch and one model
/// batch of even size.
///
/// Returns `mean_demo f − Σ_first D·f / Σ_second D`, where the two sums
/// run over disjoint halves of `model_samples`. The halves keep the
/// numerator and denominator independent; the `D` reweighting accounts
/// for the sampler targeting `∝ exp(−θᵀf)` while the model density
/// carries the transition-probability factor. On deterministic
/// environments every `D` is 1 and the ratio collapses to the first
/// half's feature mean.
pub fn estimate_gradient(
    demos: &[Trajectory],
    model_samples: &[Trajectory],
    mdp: &Mdp,
    fmap: &FeatureMap,
) -> Result<Vec<f64>> {
    if demos.is_empty() {
        return Err(Error::Input("gradient estimation needs at least one demo".into()));
    }
    if model_samples.len() < 2 || model_samples.len() % 2 != 0 {
        return Err(Error::Input(format!(
            "model batch must have even size ≥ 2, got {}",
            model_samples.len()
        )));
    }
    let discount = mdp.discount();
    let half = model_samples.len() / 2;
    let mut numerator = vec![0.0; fmap.dim()];
    for t in &model_samples[..half] {
        let d = transition_prob(t, mdp);
        let f = path_feature(t, fmap, discount)?;
        for (n, fi) in numerator.iter_mut().zip(&f) {
            *n += d * fi;
        }
    }
    let denominator: f64 = model_samples[half..]
        .iter()
        .map(|t| transition_prob(t, mdp))
        .sum();
    if denominator == 0.0 {
        return Err(Error::DegenerateBatch);
    }
    let demo_mean = mean_feature(demos, fmap, discount)?;
    Ok(demo_mean
        .iter()
        .zip(&numerator)
        .map(|(d, n)| d - n / denominator)
        .collect())
}

// ---------------------------------------------------------------------------
// Exact twins (enumeration-backed)
// ---------------------------------------------------------------------------

/// Cached enumeration of the constrained space with per-trajectory
/// features, so repeated exact evaluations don't re-enumerate.
struct ExactSpace {
    features: Vec<Vec<f64>>,
    log_dprobs: Vec<f64>,
    dim: usize,
}

impl ExactSpace {
    fn build(mdp: &Mdp, cset: &ConstraintSet, fmap: &FeatureMap, horizon: usize) -> Result<Self> {
        let space = exact::enumerate(mdp, cset, horizon, DEFAULT_ENUM_CAP)?;
        if space.is_empty() {
            return Err(Error::Infeasible);
        }
        let features = space.path_features(fmap, mdp.discount())?;
        let log_dprobs = space.dprobs.iter().map(|d| d.ln()).collect();
        Ok(Self { features, log_dprobs, dim: fmap.dim() })
    }

    /// Log-weights `−θᵀf + ln D` of every feasible trajectory.
    fn log_weights(&self, theta: &ModelParams) -> Vec<f64> {
        self.features
            .iter()
            .zip(&self.log_dprobs)
            .map(|(f, ld)| {
                ld - theta.theta.iter().zip(f).map(|(t, fi)| t * fi).sum::<f64>()
            })
            .collect()
    }

    /// log Σ exp(−θᵀf)·D over the feasible set.
    fn log_partition(&self, theta: &ModelParams) -> f64 {
        log_sum_exp(&self.log_weights(theta))
    }

    /// E_P[f] under the exact model distribution.
    fn model_mean(&self, theta: &ModelParams) -> Vec<f64> {
        let lw = self.log_weights(theta);
        let lz = log_sum_exp(&lw);
        let mut mean = vec![0.0; self.dim];
        for (f, l) in self.features.iter().zip(&lw) {
            let p = (l - lz).exp();
            for (m, fi) in mean.iter_mut().zip(f) {
                *m += p * fi;
            }
        }
        mean
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact objective: `(1/|D|) Σ_demo θᵀf(τ) + log Σ_feasible
/// exp(−θᵀf)·D`, by full enumeration. Constant terms independent of θ
/// are omitted.
pub fn nll_exact(
    theta: &ModelParams,
    demos: &[Trajectory],
    mdp: &Mdp,
    cset: &ConstraintSet,
    fmap: &FeatureMap,
    horizon: usize,
) -> Result<f64> {
    if demos.is_empty() {
        return Err(Error::Input("need at least one demonstration".into()));
    }
    let space = ExactSpace::build(mdp, cset, fmap, horizon)?;
    let demo_mean = mean_feature(demos, fmap, mdp.discount())?;
    let demo_term: f64 = theta.theta.iter().zip(&demo_mean).map(|(t, f)| t * f).sum();
    Ok(demo_term + space.log_partition(theta))
}

/// Exact gradient `E_demo[f] − E_P[f]`, by full enumeration.
pub fn exact_gradient(
    theta: &ModelParams,
    demos: &[Trajectory],
    mdp: &Mdp,
    cset: &ConstraintSet,
    fmap: &FeatureMap,
    horizon: usize,
) -> Result<Vec<f64>> {
    if demos.is_empty() {
        return Err(Error::Input("need at least one demonstration".into()));
    }
    let space = ExactSpace::build(mdp, cset, fmap, horizon)?;
    let demo_mean = mean_feature(demos, fmap, mdp.discount())?;
    let model_mean = space.model_mean(theta);
    Ok(demo_mean.iter().zip(&model_mean).map(|(d, m)| d - m).collect())
}

/// Result of exact-gradient descent.
#[derive(Debug, Clone)]
pub struct ExactDescent {
    pub theta: ModelParams,
    /// NLL after each step (index 0 is the NLL at θ0).
    pub nll_trace: Vec<f64>,
    pub iterations: usize,
    /// Whether the gradient's max-norm fell under the tolerance.
    pub converged: bool,
}

/// Plain gradient descent on the exact objective — the verification
/// twin of [`train`], and the way reference optima are produced on
/// enumerable instances. Stops when `‖∇L‖∞ ≤ tolerance`.
pub fn minimize_nll_exact(
    mdp: &Mdp,
    fmap: &FeatureMap,
    cset: &ConstraintSet,
    horizon: usize,
    demos: &[Trajectory],
    theta0: &ModelParams,
    learning_rate: f64,
    max_iterations: usize,
    tolerance: f64,
) -> Result<ExactDescent> {
    if demos.is_empty() {
        return Err(Error::Input("need at least one demonstration".into()));
    }
    let space = ExactSpace::build(mdp, cset, fmap, horizon)?;
    let demo_mean = mean_feature(demos, fmap, mdp.discount())?;
    let nll = |theta: &ModelParams| -> f64 {
        let demo_term: f64 = theta.theta.iter().zip(&demo_mean).map(|(t, f)| t * f).sum();
        demo_term + space.log_partition(theta)
    };
    let mut theta = theta0.clone();
    let mut trace = vec![nll(&theta)];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iterations {
        let model_mean = space.model_mean(&theta);
        let grad: Vec<f64> =
            demo_mean.iter().zip(&model_mean).map(|(d, m)| d - m).collect();
        if grad.iter().all(|g| g.abs() <= tolerance) {
            converged = true;
            break;
        }
        for (t, g) in theta.theta.iter_mut().zip(&grad) {
            *t -= learning_rate * g;
        }
        iterations += 1;
        trace.push(nll(&theta));
    }
    Ok(ExactDescent { theta, nll_trace: trace, iterations, converged })
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------


/// Runs the full stochastic loop: per iteration, draw `2·model_batch`
/// trajectories from the current model with the parity-hashing sampler,
/// draw `demo_batch` demonstrations uniformly, take a ratio-gradient
/// step, and finally return the average of the iterates θ_1..θ_K
/// (θ_0 is not part of the average).
///
/// Demonstrations must satisfy every constraint and be consistent with
/// the environment; violations are input errors. A learning rate above
/// `(2 − δ²)/(σ̂2²·δ)` triggers a warning in the returned state, with
/// σ̂2² estimated from the first model batch unless
/// `cfg.variance_bounds` supplies it.
pub fn train(
    cfg: &TrainConfig,
    mdp: &Mdp,
    fmap: &FeatureMap,
    cset: &ConstraintSet,
    horizon: usize,
    demos: &[Trajectory],
    theta0: &ModelParams,
) -> Result<(ModelParams, TrainState)> {
    cfg.validate()?;
    if demos.is_empty() {
        return Err(Error::Input("training needs at least one demonstration".into()));
    }
    for (i, t) in demos.iter().enumerate() {
        if !t.is_consistent(mdp) {
            return Err(Error::Input(format!(
                "demonstration {i} is inconsistent with the environment"
            )));
        }
        if !indicator(t, cset) {
            return Err(Error::Input(format!(
                "demonstration {i} violates the hard constraints"
            )));
        }
    }
    if theta0.dim() != fmap.dim() {
        return Err(Error::Config(format!(
            "theta0 dimension {} does not match feature dimension {}",
            theta0.dim(),
            fmap.dim()
        )));
    }

    let (enc, rows) = encode(mdp, cset, horizon)?;
    let stats = OracleStats::default();
    let discount = mdp.discount();

    let mut state = TrainState {
        theta_k: theta0.clone(),
        iterate_sum: vec![0.0; theta0.dim()],
        k: 0,
        stats,
        loss_trace: cfg.track_exact_nll.then(Vec::new),
        trace: Vec::with_capacity(cfg.iterations),
        warnings: Vec::new(),
        variance_estimates: None,
    };

    let sigma1_sq = match cfg.variance_bounds {
        Some((s1, _)) => s1,
        None => feature_variance(demos, fmap, discount)?,
    };
    let mut sigma2_sq = cfg.variance_bounds.map(|(_, s2)| s2);

    let train_started = Instant::now();
    for k in 1..=cfg.iterations {
        if let Some(budget) = cfg.max_wall_seconds {
            if k > 1 && train_started.elapsed().as_secs_f64() >= budget {
                state.warnings.push(format!(
                    "wall-clock budget of {budget}s reached after {} of {} iterations; \
                     returning the average of the completed iterates",
                    k - 1,
                    cfg.iterations
                ));
                break;
            }
        }
        let started = Instant::now();
        let ctx = SamplerContext {
            mdp,
            fmap,
            enc: &enc,
            rows: &rows,
            solver: &cfg.solver,
        };
        let report = batch_sample(
            2 * cfg.model_batch,
            &state.theta_k,
            &ctx,
            &cfg.sampler,
            mix64(cfg.seed, 2 * k as u64 + 1),
            &state.stats,
        )?;

        // learning-rate guard, once, using the first batch when no
        // bound was supplied
        if sigma2_sq.is_none() {
            sigma2_sq = Some(feature_variance(&report.trajectories, fmap, discount)?);
        }
        if k == 1 {
            let s2 = sigma2_sq.expect("estimated above");
            state.variance_estimates = Some((sigma1_sq, s2));
            let delta = cfg.sampler.delta;
            let bound = (2.0 - delta * delta) / (s2 * delta);
            if s2 > 0.0 && cfg.learning_rate > bound {
                state.warnings.push(format!(
                    "learning rate {} exceeds the averaged-iterate guard (2−δ²)/(σ̂2²δ) = {bound:.6}",
                    cfg.learning_rate
                ));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed, 2 * k as u64));
        let demo_batch: Vec<Trajectory> = (0..cfg.demo_batch)
            .map(|_| demos[rng.gen_range(0..demos.len())].clone())
            .collect();

        let grad = estimate_gradient(&demo_batch, &report.trajectories, mdp, fmap)?;
        for (t, g) in state.theta_k.theta.iter_mut().zip(&grad) {
            *t -= cfg.learning_rate * g;
        }
        for (s, t) in state.iterate_sum.iter_mut().zip(&state.theta_k.theta) {
            *s += t;
        }
        state.k = k;

        let exact_nll = if cfg.track_exact_nll {
            let v = nll_exact(&state.theta_k, demos, mdp, cset, fmap, horizon)?;
            if let Some(tr) = state.loss_trace.as_mut() {
                tr.push(v);
            }
            Some(v)
        } else {
            None
        };
        state.trace.push(TraceRow {
            k,
            grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            queries: state.stats.queries(),
            wall_ms: started.elapsed().as_millis(),
            exact_nll,
        });
    }

    let completed = state.k.max(1);
    let theta_bar = ModelParams::new(
        state
            .iterate_sum
            .iter()
            .map(|s| s / completed as f64)
            .collect(),
    )?;
    Ok((theta_bar, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Constraint;
    use crate::exact::exact_sample;
    use crate::mdp::{FeatureKind, GridAction, GridWorld, GridWorldSpec};

    fn grid(w: usize, h: usize, features: FeatureKind) -> GridWorld {
        GridWorld::build(GridWorldSpec {
            width: w,
            height: h,
            actions: vec![GridAction::Up, GridAction::Right],
            start: [0, 0],
            goal: [w - 1, h - 1],
            features,
            diag_cost: std::f64::consts::SQRT_2,
            discount: 1.0,
        })
        .unwrap()
    }

    fn sampler_cfg() -> SamplerConfig {
        SamplerConfig::new(1.3, 0.2).unwrap()
    }

    #[test]
    fn deterministic_environments_reduce_to_a_mean_difference() {
        let gw = grid(3, 3, FeatureKind::PerCell);
        let space =
            exact::enumerate(gw.mdp(), &ConstraintSet::empty(), 4, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(space.len(), 6);
        let demos: Vec<Trajectory> = space.trajectories[..3].to_vec();
        let model: Vec<Trajectory> = space.trajectories[2..6].to_vec();
        let g = estimate_gradient(&demos, &model, gw.mdp(), gw.feature_map()).unwrap();
        let demo_mean = mean_feature(&demos, gw.feature_map(), 1.0).unwrap();
        let first_half_mean = mean_feature(&model[..2], gw.feature_map(), 1.0).unwrap();
        for ((g, d), m) in g.iter().zip(&demo_mean).zip(&first_half_mean) {
            assert!((g - (d - m)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_trajectory_space_yields_a_zero_gradient() {
        let gw = grid(1, 3, FeatureKind::PerCell);
        let space =
            exact::enumerate(gw.mdp(), &ConstraintSet::empty(), 4, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(space.len(), 1);
        let only = space.trajectories[0].clone();
        let demos = vec![only.clone(); 3];
        let model = vec![only; 4];
        let g = estimate_gradient(&demos, &model, gw.mdp(), gw.feature_map()).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_transition_probability_batches_are_degenerate() {
        let gw = grid(2, 2, FeatureKind::Distance);
        // a fabricated trajectory taking an impossible step
        let bogus = Trajectory { steps: vec![(0, 0), (0, 1)], terminal: 3 };
        assert_eq!(transition_prob(&bogus, gw.mdp()), 0.0);
        let space =
            exact::enumerate(gw.mdp(), &ConstraintSet::empty(), 2, DEFAULT_ENUM_CAP).unwrap();
        let demos = vec![space.trajectories[0].clone()];
        let model = vec![space.trajectories[0].clone(), bogus];
        assert!(matches!(
            estimate_gradient(&demos, &model, gw.mdp(), gw.feature_map()),
            Err(Error::DegenerateBatch)
        ));
    }

    #[test]
    fn estimator_mean_matches_the_enumeration_gradient() {
        let gw = grid(4, 4, FeatureKind::PerCell);
        let cset = ConstraintSet::empty();
        let horizon = 6;
        let mut theta = vec![0.0; 16];
        theta[5] = 0.8;
        theta[10] = -0.5;
        theta[6] = 0.3;
        let params = ModelParams::new(theta).unwrap();
        let space = exact::enumerate(gw.mdp(), &cset, horizon, DEFAULT_ENUM_CAP).unwrap();
        let feats = space.path_features(gw.feature_map(), 1.0).unwrap();
        let weighted = space.weighted(&feats, &params);

        let demo_set: Vec<Trajectory> =
            space.trajectories.iter().take(8).cloned().collect();
        let exact_g =
            exact_gradient(&params, &demo_set, gw.mdp(), &cset, gw.feature_map(), horizon)
                .unwrap();

        // substitute the exact sampler for the hashing sampler: the
        // estimator mean must match the enumeration gradient
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let reps = 10_000;
        let m1 = 4;
        let m2 = 8;
        let mut mean = vec![0.0; 16];
        let mut sq = vec![0.0; 16];
        for _ in 0..reps {
            let demos: Vec<Trajectory> = (0..m1)
                .map(|_| demo_set[rng.gen_range(0..demo_set.len())].clone())
                .collect();
            let model = exact_sample(&space, &weighted, &mut rng, 2 * m2).unwrap();
            let g = estimate_gradient(&demos, &model, gw.mdp(), gw.feature_map()).unwrap();
            for i in 0..16 {
                mean[i] += g[i];
                sq[i] += g[i] * g[i];
            }
        }
        for i in 0..16 {
            mean[i] /= reps as f64;
            let var = (sq[i] / reps as f64 - mean[i] * mean[i]).max(0.0);
            let se = (var / reps as f64).sqrt();
            assert!(
                (mean[i] - exact_g[i]).abs() <= 4.0 * se + 1e-12,
                "component {i}: estimator mean {} vs exact {} (se {se})",
                mean[i],
                exact_g[i]
            );
        }
    }

    #[test]
    fn symmetric_demos_at_zero_theta_have_zero_gradient() {
        let gw = grid(2, 2, FeatureKind::PerCell);
        let space =
            exact::enumerate(gw.mdp(), &ConstraintSet::empty(), 2, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(space.len(), 2);
        let demos = space.trajectories.clone(); // one of each path
        let g = exact_gradient(
            &ModelParams::zeros(4),
            &demos,
            gw.mdp(),
            &ConstraintSet::empty(),
            gw.feature_map(),
            2,
        )
        .unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let gw = grid(3, 3, FeatureKind::Both);
        let cset = ConstraintSet::empty();
        let horizon = 4;
        let space = exact::enumerate(gw.mdp(), &cset, horizon, DEFAULT_ENUM_CAP).unwrap();
        let demos = vec![space.trajectories[0].clone(), space.trajectories[3].clone()];
        let mut theta = vec![0.5; 10];
        theta[3] = -0.2;
        theta[7] = 0.9;
        let params = ModelParams::new(theta.clone()).unwrap();
        let g =
            exact_gradient(&params, &demos, gw.mdp(), &cset, gw.feature_map(), horizon).unwrap();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus[i] += h;
            let mut minus = theta.clone();
            minus[i] -= h;
            let lp = nll_exact(
                &ModelParams::new(plus).unwrap(),
                &demos,
                gw.mdp(),
                &cset,
                gw.feature_map(),
                horizon,
            )
            .unwrap();
            let lm = nll_exact(
                &ModelParams::new(minus).unwrap(),
                &demos,
                gw.mdp(),
                &cset,
                gw.feature_map(),
                horizon,
            )
            .unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() < 1e-6,
                "component {i}: finite difference {fd} vs gradient {}",
                g[i]
            );
        }
    }

    #[test]
    fn uniform_weights_make_the_partition_log_of_the_count() {
        let gw = grid(3, 3, FeatureKind::Distance);
        let space =
            exact::enumerate(gw.mdp(), &ConstraintSet::empty(), 4, DEFAULT_ENUM_CAP).unwrap();
        let demos = vec![space.trajectories[0].clone()];
        let nll = nll_exact(
            &ModelParams::zeros(1),
            &demos,
            gw.mdp(),
            &ConstraintSet::empty(),
            gw.feature_map(),
            4,
        )
        .unwrap();
        assert!((nll - 6.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn the_objective_is_convex_along_segments() {
        let gw = grid(3, 3, FeatureKind::PerCell);
        let cset = ConstraintSet::empty();
        let space = exact::enumerate(gw.mdp(), &cset, 4, DEFAULT_ENUM_CAP).unwrap();
        let demos = vec![space.trajectories[1].clone(), space.trajectories[4].clone()];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let b: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let mid: Vec<f64> =
                a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
            let l = |v: Vec<f64>| {
                nll_exact(
                    &ModelParams::new(v).unwrap(),
                    &demos,
                    gw.mdp(),
                    &cset,
                    gw.feature_map(),
                    4,
                )
                .unwrap()
            };
            assert!(l(mid) <= (l(a) + l(b)) / 2.0 + 1e-9);
        }
    }

    #[test]
    fn exact_descent_reaches_moment_matching() {
        let gw = grid(3, 3, FeatureKind::PerCell);
        let cset = ConstraintSet::empty();
        let space = exact::enumerate(gw.mdp(), &cset, 4, DEFAULT_ENUM_CAP).unwrap();
        // full-support demos, skewed toward one path, so the optimum is
        // finite and moment matching is exactly attainable
        let mut demos = space.trajectories.clone();
        demos.push(space.trajectories[0].clone());
        demos.push(space.trajectories[0].clone());
        let out = minimize_nll_exact(
            gw.mdp(),
            gw.feature_map(),
            &cset,
            4,
            &demos,
            &ModelParams::zeros(9),
            0.5,
            20_000,
            1e-8,
        )
        .unwrap();
        assert!(out.converged, "descent did not converge");
        let g = exact_gradient(&out.theta, &demos, gw.mdp(), &cset, gw.feature_map(), 4)
            .unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-6));
        // NLL trace is monotone under a small step size
        for w in out.nll_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn exact_descent_shrinks_the_gap_on_a_constrained_grid() {
        let gw = grid(4, 4, FeatureKind::PerCell);
        let forbidden = gw.cell_id(2, 2).unwrap();
        let cset = ConstraintSet::new(
            vec![Constraint::ForbiddenStates([forbidden].into_iter().collect())],
            gw.mdp(),
        )
        .unwrap();
        let space = exact::enumerate(gw.mdp(), &cset, 6, DEFAULT_ENUM_CAP).unwrap();
        let demos = vec![
            space.trajectories[0].clone(),
            space.trajectories[1].clone(),
            space.trajectories[1].clone(),
        ];
        let out = minimize_nll_exact(
            gw.mdp(),
            gw.feature_map(),
            &cset,
            6,
            &demos,
            &ModelParams::zeros(16),
            0.1,
            40,
            0.0,
        )
        .unwrap();
        assert_eq!(out.iterations, 40);
        for w in out.nll_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "NLL increased: {:?}", out.nll_trace);
        }
    }

    #[test]
    fn zero_learning_rate_returns_the_initial_parameters() {
        let gw = grid(2, 2, FeatureKind::Distance);
        let cset = ConstraintSet::empty();
        let space = exact::enumerate(gw.mdp(), &cset, 2, DEFAULT_ENUM_CAP).unwrap();
        let demos = space.trajectories.clone();
        let cfg = TrainConfig {
            iterations: 1,
            learning_rate: 0.0,
            demo_batch: 1,
            model_batch: 2,
            sampler: sampler_cfg(),
            seed: 9,
            variance_bounds: None,
            track_exact_nll: false,
            solver: SolverConfig::default(),
            max_wall_seconds: None,
        };
        let theta0 = ModelParams::new(vec![0.7]).unwrap();
        let (theta_bar, state) =
            train(&cfg, gw.mdp(), gw.feature_map(), &cset, 2, &demos, &theta0).unwrap();
        assert_eq!(theta_bar.theta, vec![0.7]);
        assert_eq!(state.k, 1);
        assert_eq!(state.trace.len(), 1);
    }

    #[test]
    fn training_rejects_demos_that_violate_constraints() {
        let gw = grid(3, 3, FeatureKind::Distance);
        let space =
            exact::enumerate(gw.mdp(), &ConstraintSet::empty(), 4, DEFAULT_ENUM_CAP).unwrap();
        // forbid a cell that the chosen demo walks through
        let demo = space.trajectories[0].clone();
        let through = demo.steps[1].0;
        let cset = ConstraintSet::new(
            vec![Constraint::ForbiddenStates([through].into_iter().collect())],
            gw.mdp(),
        )
        .unwrap();
        let cfg = TrainConfig {
            iterations: 1,
            learning_rate: 0.1,
            demo_batch: 1,
            model_batch: 1,
            sampler: sampler_cfg(),
            seed: 1,
            variance_bounds: None,
            track_exact_nll: false,
            solver: SolverConfig::default(),
            max_wall_seconds: None,
        };
        let err = train(
            &cfg,
            gw.mdp(),
            gw.feature_map(),
            &cset,
            4,
            &[demo],
            &ModelParams::zeros(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Input(_)), "{err}");
    }

    #[test]
    fn training_warns_on_an_aggressive_learning_rate() {
        let gw = grid(3, 3, FeatureKind::PerCell);
        let cset = ConstraintSet::empty();
        let space = exact::enumerate(gw.mdp(), &cset, 4, DEFAULT_ENUM_CAP).unwrap();
        let demos = space.trajectories.clone();
        let cfg = TrainConfig {
            iterations: 1,
            learning_rate: 500.0,
            demo_batch: 2,
            model_batch: 2,
            sampler: sampler_cfg(),
            seed: 4,
            variance_bounds: None,
            track_exact_nll: true,
            solver: SolverConfig::default(),
            max_wall_seconds: None,
        };
        let (_, state) = train(
            &cfg,
            gw.mdp(),
            gw.feature_map(),
            &cset,
            4,
            &demos,
            &ModelParams::zeros(9),
        )
        .unwrap();
        assert!(!state.warnings.is_empty());
        assert_eq!(state.loss_trace.as_ref().map(Vec::len), Some(1));
        assert!(state.variance_estimates.is_some());
    }

    #[test]
    fn averaged_iterates_follow_the_running_sum() {
        let gw = grid(3, 3, FeatureKind::Distance);
        let cset = ConstraintSet::empty();
        let space = exact::enumerate(gw.mdp(), &cset, 4, DEFAULT_ENUM_CAP).unwrap();
        let demos: Vec<Trajectory> = space.trajectories[..3].to_vec();
        let cfg = TrainConfig {
            iterations: 3,
            learning_rate: 0.05,
            demo_batch: 2,
            model_batch: 2,
            sampler: sampler_cfg(),
            seed: 21,
            variance_bounds: None,
            track_exact_nll: false,
            solver: SolverConfig::default(),
            max_wall_seconds: None,
        };
        let (theta_bar, state) = train(
            &cfg,
            gw.mdp(),
            gw.feature_map(),
            &cset,
            4,
            &demos,
            &ModelParams::zeros(1),
        )
        .unwrap();
        assert_eq!(state.k, 3);
        for (b, s) in theta_bar.theta.iter().zip(&state.iterate_sum) {
            assert!((b - s / 3.0).abs() < 1e-15);
        }
        assert!(state.stats.queries() > 0);
        // identical config and seed reproduce the run exactly
        let (theta_bar2, _) = train(
            &cfg,
            gw.mdp(),
            gw.feature_map(),
            &cset,
            4,
            &demos,
            &ModelParams::zeros(1),
        )
        .unwrap();
        assert_eq!(theta_bar.theta, theta_bar2.theta);
    }
}
