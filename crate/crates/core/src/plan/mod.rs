//! Cross-entropy-method trajectory optimization with a novelty-augmented
//! cost, plus the MPC replanning loop.
//!
//! Candidate trajectories are sampled from a Gaussian with element-wise
//! variances, rolled out through the transition model, and scored as
//!
//! `total = goal_mse(z_final, z_goal) + w * sum_i novelty(z_i)`
//!
//! The lowest-cost samples refit the Gaussian and the loop repeats until
//! the mean stops moving or the iteration cap is hit. The returned
//! trajectory is the lowest-cost sample ever drawn (the incumbent), which
//! is deterministic and never worse than the final mean.
//!
//! Determinism holds at any worker count: each iteration's samples are all
//! drawn from the seeded generator up front, cost evaluations are pure and
//! independent, and results are gathered in sample order.

mod mpc;

pub use mpc::{mpc_run, MpcConfig, MpcTrace};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::Action;
use crate::vae::NoveltyVae;
use crate::world::{latent_mse, Latent, TransitionModel, Window};

/// Refit variances never drop below this; a collapsed sampler stops
/// exploring and small elite counts collapse it quickly.
pub const VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct PlanConfig {
    /// Samples per iteration.
    pub samples: usize,
    /// Elite count.
    pub elites: usize,
    /// Horizon in model steps.
    pub horizon: usize,
    /// Novelty weight `w`.
    pub weight: f64,
    pub max_iters: usize,
    /// Convergence threshold on the L2 shift of the distribution mean.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            samples: 128,
            elites: 16,
            horizon: 5,
            weight: 0.25,
            max_iters: 10,
            threshold: 1e-3,
            seed: 0,
        }
    }
}

impl PlanConfig {
    fn validate(&self) -> Result<()> {
        if self.elites == 0 || self.elites > self.samples {
            return Err(Error::InvalidConfig(format!(
                "elites {} must be in 1..=samples ({})",
                self.elites, self.samples
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-timestep, per-dimension Gaussian over flat action trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDistribution {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub iteration: usize,
}

impl TrajectoryDistribution {
    /// `N(0, 1)` initialization over a `dim`-dimensional trajectory.
    pub fn standard(dim: usize) -> Self {
        TrajectoryDistribution {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            iteration: 0,
        }
    }
}

/// Cost of one candidate trajectory, with the pieces kept separate.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub goal: f64,
    /// Per-model-step novelty scores, in rollout order.
    pub novelty: Vec<f64>,
    pub total: f64,
}

impl CostBreakdown {
    pub fn novelty_sum(&self) -> f64 {
        self.novelty.iter().sum()
    }
}

/// Rolls out a flat action trajectory and scores it.
///
/// `actions_flat` holds `horizon * F` actions of 4 coordinates each. The
/// total is exactly `goal + weight * sum(novelty)`, accumulated in that
/// order.
pub fn trajectory_cost<T: Scalar>(
    model: &TransitionModel<T>,
    vae: &NoveltyVae<T>,
    window: &Window<T>,
    z_goal: &Latent<T>,
    actions_flat: &[T],
    weight: f64,
) -> Result<CostBreakdown> {
    if actions_flat.len() % (4 * model.f) != 0 {
        return Err(Error::dim(
            "flat trajectory length",
            4 * model.f,
            actions_flat.len(),
        ));
    }
    let actions = chunk_actions(actions_flat);
    let latents = model.rollout(window, &actions)?;
    let final_z = latents.last().ok_or(Error::EmptyInput("rollout"))?;

    let mut novelty = Vec::with_capacity(latents.len());
    let mut novelty_sum = 0.0f64;
    for z in &latents {
        let s = vae.score(z)?;
        novelty.push(s);
        novelty_sum += s;
    }
    let goal = latent_mse(final_z, z_goal);
    let total = goal + weight * novelty_sum;
    Ok(CostBreakdown {
        goal,
        novelty,
        total,
    })
}

/// Splits a flat coordinate vector into pusher actions.
pub fn chunk_actions<T: Scalar>(flat: &[T]) -> Vec<Action<T>> {
    flat.chunks_exact(4)
        .map(|c| Action::from_array([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Refits the sampling distribution to the elite set: per-dimension mean
/// and population variance (divide by k), floored at [`VARIANCE_FLOOR`].
pub fn refit(elites: &[Vec<f64>]) -> Result<TrajectoryDistribution> {
    let k = elites.len();
    if k == 0 {
        return Err(Error::ContractViolation("refit with an empty elite set".into()));
    }
    let dim = elites[0].len();
    let mut mean = vec![0.0f64; dim];
    for e in elites {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= k as f64;
    }
    let mut var = vec![0.0f64; dim];
    for e in elites {
        for ((s, v), m) in var.iter_mut().zip(e).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in var.iter_mut() {
        *s = (*s / k as f64).max(VARIANCE_FLOOR);
    }
    Ok(TrajectoryDistribution {
        mean,
        var,
        iteration: 0,
    })
}

/// One row of planner diagnostics. `best_*` fields describe the incumbent
/// (best-ever) sample, so `best_total` is non-increasing by construction.
#[derive(Debug, Clone)]
pub struct IterStats {
    pub iteration: usize,
    pub best_total: f64,
    pub best_goal: f64,
    pub best_novelty_sum: f64,
    pub mean_total: f64,
    pub mean_shift: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub iterations: Vec<IterStats>,
    pub evaluations: usize,
}

impl Diagnostics {
    /// CSV with the per-iteration planner log.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("iteration,best_total,best_goal,best_novelty_sum,mean_total,mean_shift\n");
        for s in &self.iterations {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                s.iteration, s.best_total, s.best_goal, s.best_novelty_sum, s.mean_total,
                s.mean_shift
            ));
        }
        out
    }
}

/// Core CEM loop over an arbitrary cost function.
///
/// Samples are clipped to `[-1, 1]` after drawing (never by truncating the
/// distribution), and the elites are the clipped vectors the cost actually
/// saw. Returns the incumbent sample, its cost breakdown and diagnostics.
pub fn cem_optimize<F>(
    dim: usize,
    cfg: &PlanConfig,
    cost_fn: F,
) -> Result<(Vec<f64>, CostBreakdown, Diagnostics)>
where
    F: Fn(&[f64]) -> Result<CostBreakdown> + Sync,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dist = TrajectoryDistribution::standard(dim);
    let mut incumbent: Option<(Vec<f64>, CostBreakdown)> = None;
    let mut diag = Diagnostics::default();

    for iteration in 0..cfg.max_iters {
        // Pre-draw every sample before dispatch so worker count cannot
        // perturb the stream.
        let std: Vec<f64> = dist.var.iter().map(|v| v.sqrt()).collect();
        let samples: Vec<Vec<f64>> = (0..cfg.samples)
            .map(|_| {
                (0..dim)
                    .map(|j| {
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        (dist.mean[j] + std[j] * eps).clamp(-1.0, 1.0)
                    })
                    .collect()
            })
            .collect();

        let costs: Vec<CostBreakdown> = samples
            .par_iter()
            .map(|s| cost_fn(s))
            .collect::<Result<_>>()?;
        diag.evaluations += cfg.samples;

        let mut order: Vec<usize> = (0..cfg.samples).collect();
        order.sort_by(|&a, &b| {
            costs[a]
                .total
                .partial_cmp(&costs[b].total)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        if !costs[order[0]].total.is_finite() {
            return Err(Error::NonFinite {
                what: "trajectory cost",
                step: iteration as u64,
            });
        }

        let best_idx = order[0];
        let replace = match &incumbent {
            Some((_, c)) => costs[best_idx].total < c.total,
            None => true,
        };
        if replace {
            incumbent = Some((samples[best_idx].clone(), costs[best_idx].clone()));
        }

        let elites: Vec<Vec<f64>> = order[..cfg.elites]
            .iter()
            .map(|&i| samples[i].clone())
            .collect();
        let refitted = refit(&elites)?;
        let mean_shift = dist
            .mean
            .iter()
            .zip(&refitted.mean)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let mean_total = costs.iter().map(|c| c.total).sum::<f64>() / cfg.samples as f64;

        dist.mean = refitted.mean;
        dist.var = refitted.var;
        dist.iteration = iteration + 1;

        let (_, best) = incumbent.as_ref().expect("set on first iteration");
        diag.iterations.push(IterStats {
            iteration,
            best_total: best.total,
            best_goal: best.goal,
            best_novelty_sum: best.novelty_sum(),
            mean_total,
            mean_shift,
        });

        if mean_shift < cfg.threshold {
            break;
        }
    }

    let (traj, cost) = incumbent.expect("at least one iteration ran");
    Ok((traj, cost, diag))
}

/// Plans an action trajectory toward `z_goal` from the current window.
///
/// Returns the planned environment actions (`horizon * F` of them), the
/// incumbent's cost breakdown and the per-iteration diagnostics.
pub fn plan<T: Scalar>(
    model: &TransitionModel<T>,
    vae: &NoveltyVae<T>,
    window: &Window<T>,
    z_goal: &Latent<T>,
    cfg: &PlanConfig,
) -> Result<(Vec<Action<T>>, CostBreakdown, Diagnostics)> {
    let dim = cfg.horizon * 4 * model.f;
    let (flat, cost, diag) = cem_optimize(dim, cfg, |sample| {
        let actions: Vec<T> = sample.iter().map(|&v| T::of(v)).collect();
        trajectory_cost(model, vae, window, z_goal, &actions, cfg.weight)
    })?;
    let actions = chunk_actions(&flat.iter().map(|&v| T::of(v)).collect::<Vec<T>>());
    Ok((actions, cost, diag))
}
