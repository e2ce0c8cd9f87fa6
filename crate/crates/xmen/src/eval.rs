//! Post-training generation and evaluation: proposal sampling followed
//! by importance resampling, plus the reporting metrics — valid
//! fraction, per-state occupancy marginals, and a class-level KL
//! divergence between demonstration and model path distributions.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::{indicator, ConstraintSet};
use crate::error::{Error, Result};
use crate::mdp::{transition_prob, GridWorld, Mdp, ModelParams, Trajectory};
use crate::oracle::OracleStats;
use crate::sampler::{batch_sample, mix64, SamplerConfig, SamplerContext};

/// Per-state marginal probability of visitation over a trajectory set.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMap {
    pub marginal: Vec<f64>,
}

/// Fraction of the set that satisfies every constraint.
pub fn valid_fraction(trajs: &[Trajectory], cset: &ConstraintSet) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::Input("valid_fraction of an empty trajectory set".into()));
    }
    let ok = trajs.iter().filter(|t| indicator(t, cset)).count();
    Ok(ok as f64 / trajs.len() as f64)
}

/// Per-state fraction of trajectories that pass through the state; a
/// state visited twice in one trajectory still counts once.
pub fn occupancy(trajs: &[Trajectory], n_states: usize) -> Result<OccupancyMap> {
    if trajs.is_empty() {
        return Err(Error::Input("occupancy of an empty trajectory set".into()));
    }
    let mut marginal = vec![0.0; n_states];
    for t in trajs {
        let visited: BTreeSet<_> = t.visited().collect();
        for s in visited {
            marginal[s] += 1.0;
        }
    }
    for m in &mut marginal {
        *m /= trajs.len() as f64;
    }
    Ok(OccupancyMap { marginal })
}

/// KL(demo ‖ model) over the two classes induced by `classifier`, with
/// additive smoothing `ε = 1e-6` on empty bins so the divergence stays
/// finite.
pub fn path_kl<F>(trajs_model: &[Trajectory], trajs_demo: &[Trajectory], classifier: F) -> Result<f64>
where
    F: Fn(&Trajectory) -> bool,
{
    if trajs_model.is_empty() || trajs_demo.is_empty() {
        return Err(Error::Input("path_kl needs nonempty model and demo sets".into()));
    }
    let dist = |set: &[Trajectory]| -> [f64; 2] {
        let hits = set.iter().filter(|t| classifier(t)).count() as f64;
        let mut p = [hits / set.len() as f64, 1.0 - hits / set.len() as f64];
        const EPS: f64 = 1e-6;
        if p[0] == 0.0 || p[1] == 0.0 {
            p[0] += EPS;
            p[1] += EPS;
            let z = p[0] + p[1];
            p[0] /= z;
            p[1] /= z;
        }
        p
    };
    let pd = dist(trajs_demo);
    let pm = dist(trajs_model);
    Ok(pd[0] * (pd[0] / pm[0]).ln() + pd[1] * (pd[1] / pm[1]).ln())
}

/// Sampling-importance-resampling over a proposal pool: draws
/// `out_size` trajectories with replacement, each pool entry weighted
/// by its transition probability `D(τ)` (self-normalized). On
/// deterministic environments every weight is 1 and the resampling is
/// uniform.
pub fn resample(
    pool: &[Trajectory],
    mdp: &Mdp,
    out_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>> {
    if pool.is_empty() {
        return Err(Error::Input("resampling from an empty pool".into()));
    }
    let weights: Vec<f64> = pool.iter().map(|t| transition_prob(t, mdp)).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateBatch);
    }
    let mut out = Vec::with_capacity(out_size);
    for _ in 0..out_size {
        let mut u = rng.gen::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        out.push(pool[pick].clone());
    }
    Ok(out)
}

/// Draws a proposal pool of `pool_size` trajectories from the hashing
/// sampler at `theta_bar`, then resamples `out_size` of them by their
/// dynamics weights. Every output satisfies the constraints because
/// every pool entry does.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    theta_bar: &ModelParams,
    ctx: SamplerContext<'_>,
    sampler_cfg: &SamplerConfig,
    pool_size: usize,
    out_size: usize,
    seed: u64,
    stats: &OracleStats,
) -> Result<Vec<Trajectory>> {
    if pool_size < out_size {
        return Err(Error::Config(format!(
            "pool_size {pool_size} must be at least out_size {out_size}"
        )));
    }
    let report =
        batch_sample(pool_size, theta_bar, &ctx, sampler_cfg, mix64(seed, 0x9001), stats)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed, 0x9002));
    resample(&report.trajectories, ctx.mdp, out_size, &mut rng)
}

/// One line of the evaluation summary.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub method: String,
    pub valid_fraction: f64,
    pub kl: f64,
    pub n: usize,
}

/// Writes `method,valid_fraction,kl,n` rows for external plotting.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "method,valid_fraction,kl,n")?;
    for r in rows {
        writeln!(f, "{},{},{},{}", r.method, r.valid_fraction, r.kl, r.n)?;
    }
    Ok(())
}

/// Writes `x,y,marginal` rows, one per grid cell.
pub fn write_occupancy_csv(path: &Path, grid: &GridWorld, map: &OccupancyMap) -> Result<()> {
    if map.marginal.len() != grid.mdp().n_states() {
        return Err(Error::Input(format!(
            "occupancy has {} entries for {} states",
            map.marginal.len(),
            grid.mdp().n_states()
        )));
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "x,y,marginal")?;
    for (s, m) in map.marginal.iter().enumerate() {
        let (x, y) = grid.cell_of(s);
        writeln!(f, "{x},{y},{m}")?;
    }
    Ok(())
}
