//! Flat key=value run configuration.
//!
//! One namespaced key set covers every tunable in the pipeline. Values come
//! from (in increasing precedence) built-in defaults, a config file, and
//! command-line overrides. Unknown keys are rejected so typos fail loudly.

use crate::data::{ActionBox, PolicySpec};
use crate::error::{Error, Result};
use crate::eval::EvalSpec;
use crate::mix;
use crate::plan::PlanConfig;
use crate::sim::EnvKind;
use crate::vae::VaeConfig;
use crate::world::{EncoderConfig, TransitionConfig};

const SCENE_SALT: u64 = 0x5ce0;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Planner/eval worker threads; 0 means one per logical CPU. Must never
    /// affect results, only wall-clock.
    pub workers: usize,

    pub env_kind: EnvKind,
    pub env_grid: usize,

    /// 0 selects the per-environment default (granular 100, rope 1000).
    pub data_episodes: usize,
    pub data_frames: usize,
    /// `uniform` or `gapped`. The headline experiments study planning under
    /// a coverage hole, so the pipeline defaults to `gapped`.
    pub data_policy: String,
    pub data_gap_lo: [f64; 4],
    pub data_gap_hi: [f64; 4],
    pub data_val_fraction: f64,

    pub encoder_latent_dim: usize,
    pub encoder_hidden: usize,
    pub encoder_steps: usize,
    pub encoder_batch: usize,
    pub encoder_lr: f64,
    /// Denoising-noise stddev during encoder pretraining; 0 disables.
    pub encoder_noise: f64,

    pub dynamics_h: usize,
    pub dynamics_f: usize,
    pub dynamics_hidden: usize,
    pub dynamics_steps: usize,
    pub dynamics_batch: usize,
    pub dynamics_lr: f64,
    /// 0 disables dropout (the default).
    pub dynamics_dropout: f64,
    /// Gaussian input-noise stddev during dynamics training; 0 disables.
    pub dynamics_noise: f64,

    pub vae_bottleneck: usize,
    pub vae_hidden: usize,
    pub vae_beta: f64,
    pub vae_steps: usize,
    pub vae_batch: usize,
    pub vae_lr: f64,
    /// 0 selects the per-environment default (granular 100, rope 500).
    pub vae_min_samples: usize,

    pub plan_samples: usize,
    pub plan_elites: usize,
    pub plan_horizon: usize,
    pub plan_w: f64,
    pub plan_max_iters: usize,
    pub plan_threshold: f64,

    pub eval_weights: Vec<f64>,
    pub eval_scenes: usize,
    pub eval_goal_actions: usize,
    pub eval_budget: usize,
    pub eval_execute_per_replan: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            workers: 1,
            env_kind: EnvKind::Granular,
            env_grid: 32,
            data_episodes: 0,
            data_frames: 20,
            data_policy: "gapped".into(),
            data_gap_lo: [0.0, -1.0, -1.0, -1.0],
            data_gap_hi: [1.0, 1.0, 1.0, 1.0],
            data_val_fraction: 0.1,
            encoder_latent_dim: 32,
            encoder_hidden: 128,
            encoder_steps: 2500,
            encoder_batch: 32,
            encoder_lr: 2e-3,
            encoder_noise: 0.05,
            dynamics_h: 1,
            dynamics_f: 1,
            dynamics_hidden: 128,
            dynamics_steps: 2500,
            dynamics_batch: 64,
            dynamics_lr: 1e-3,
            dynamics_dropout: 0.0,
            dynamics_noise: 0.0,
            vae_bottleneck: 8,
            vae_hidden: 64,
            vae_beta: 1e-3,
            vae_steps: 2500,
            vae_batch: 64,
            vae_lr: 1e-3,
            vae_min_samples: 0,
            plan_samples: 128,
            plan_elites: 16,
            plan_horizon: 5,
            plan_w: 0.25,
            plan_max_iters: 10,
            plan_threshold: 1e-3,
            eval_weights: vec![0.0, 0.125, 0.25, 0.375, 0.5],
            eval_scenes: 5,
            eval_goal_actions: 3,
            eval_budget: 6,
            eval_execute_per_replan: 2,
        }
    }
}

impl RunConfig {
    /// Applies one `key=value` assignment. Unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidConfig(format!("cannot parse {key}={value:?} as {what}"));
        macro_rules! set {
            ($field:expr, $ty:ty, $what:expr) => {
                $field = value.parse::<$ty>().map_err(|_| bad($what))?
            };
        }
        match key {
            "seed" => set!(self.seed, u64, "u64"),
            "workers" => set!(self.workers, usize, "usize"),
            "env.kind" => self.env_kind = EnvKind::parse(value)?,
            "env.grid" => set!(self.env_grid, usize, "usize"),
            "data.episodes" => set!(self.data_episodes, usize, "usize"),
            "data.frames" => set!(self.data_frames, usize, "usize"),
            "data.policy" => {
                if value != "uniform" && value != "gapped" {
                    return Err(Error::InvalidConfig(format!(
                        "data.policy must be uniform|gapped, got {value:?}"
                    )));
                }
                self.data_policy = value.to_string();
            }
            "data.gap_lo" => self.data_gap_lo = parse_f64_4(value)?,
            "data.gap_hi" => self.data_gap_hi = parse_f64_4(value)?,
            "data.val_fraction" => set!(self.data_val_fraction, f64, "f64"),
            "encoder.latent_dim" => set!(self.encoder_latent_dim, usize, "usize"),
            "encoder.hidden" => set!(self.encoder_hidden, usize, "usize"),
            "encoder.steps" => set!(self.encoder_steps, usize, "usize"),
            "encoder.batch" => set!(self.encoder_batch, usize, "usize"),
            "encoder.lr" => set!(self.encoder_lr, f64, "f64"),
            "encoder.noise" => set!(self.encoder_noise, f64, "f64"),
            "dynamics.h" => set!(self.dynamics_h, usize, "usize"),
            "dynamics.f" => set!(self.dynamics_f, usize, "usize"),
            "dynamics.hidden" => set!(self.dynamics_hidden, usize, "usize"),
            "dynamics.steps" => set!(self.dynamics_steps, usize, "usize"),
            "dynamics.batch" => set!(self.dynamics_batch, usize, "usize"),
            "dynamics.lr" => set!(self.dynamics_lr, f64, "f64"),
            "dynamics.dropout" => set!(self.dynamics_dropout, f64, "f64"),
            "dynamics.noise" => set!(self.dynamics_noise, f64, "f64"),
            "vae.bottleneck" => set!(self.vae_bottleneck, usize, "usize"),
            "vae.hidden" => set!(self.vae_hidden, usize, "usize"),
            "vae.beta" => set!(self.vae_beta, f64, "f64"),
            "vae.steps" => set!(self.vae_steps, usize, "usize"),
            "vae.batch" => set!(self.vae_batch, usize, "usize"),
            "vae.lr" => set!(self.vae_lr, f64, "f64"),
            "vae.min_samples" => set!(self.vae_min_samples, usize, "usize"),
            "plan.samples" => set!(self.plan_samples, usize, "usize"),
            "plan.elites" => set!(self.plan_elites, usize, "usize"),
            "plan.horizon" => set!(self.plan_horizon, usize, "usize"),
            "plan.w" => set!(self.plan_w, f64, "f64"),
            "plan.max_iters" => set!(self.plan_max_iters, usize, "usize"),
            "plan.threshold" => set!(self.plan_threshold, f64, "f64"),
            "eval.weights" => {
                self.eval_weights = value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| bad("f64 list")))
                    .collect::<Result<_>>()?;
                if self.eval_weights.is_empty() {
                    return Err(Error::InvalidConfig("eval.weights must be non-empty".into()));
                }
            }
            "eval.scenes" => set!(self.eval_scenes, usize, "usize"),
            "eval.goal_actions" => set!(self.eval_goal_actions, usize, "usize"),
            "eval.budget" => set!(self.eval_budget, usize, "usize"),
            "eval.execute_per_replan" => set!(self.eval_execute_per_replan, usize, "usize"),
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Parses a config file: `key = value` lines, `#` comments, blank lines.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "line {}: expected key=value, got {raw:?}",
                    lineno + 1
                )));
            };
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Fully resolved config as key=value text, fixed key order. A copy of
    /// this lands in every run directory so runs can be replayed exactly.
    pub fn resolved(&self) -> String {
        let gap = |v: &[f64; 4]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let weights = self
            .eval_weights
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "seed = {}\nworkers = {}\nenv.kind = {}\nenv.grid = {}\n\
             data.episodes = {}\ndata.frames = {}\ndata.policy = {}\n\
             data.gap_lo = {}\ndata.gap_hi = {}\ndata.val_fraction = {}\n\
             encoder.latent_dim = {}\nencoder.hidden = {}\nencoder.steps = {}\n\
             encoder.batch = {}\nencoder.lr = {}\nencoder.noise = {}\n\
             dynamics.h = {}\ndynamics.f = {}\ndynamics.hidden = {}\n\
             dynamics.steps = {}\ndynamics.batch = {}\ndynamics.lr = {}\ndynamics.dropout = {}\n\
             dynamics.noise = {}\n\
             vae.bottleneck = {}\nvae.hidden = {}\nvae.beta = {}\nvae.steps = {}\n\
             vae.batch = {}\nvae.lr = {}\nvae.min_samples = {}\n\
             plan.samples = {}\nplan.elites = {}\nplan.horizon = {}\nplan.w = {}\n\
             plan.max_iters = {}\nplan.threshold = {}\n\
             eval.weights = {}\neval.scenes = {}\neval.goal_actions = {}\n\
             eval.budget = {}\neval.execute_per_replan = {}\n",
            self.seed,
            self.workers,
            self.env_kind,
            self.env_grid,
            self.data_episodes,
            self.data_frames,
            self.data_policy,
            gap(&self.data_gap_lo),
            gap(&self.data_gap_hi),
            self.data_val_fraction,
            self.encoder_latent_dim,
            self.encoder_hidden,
            self.encoder_steps,
            self.encoder_batch,
            self.encoder_lr,
            self.encoder_noise,
            self.dynamics_h,
            self.dynamics_f,
            self.dynamics_hidden,
            self.dynamics_steps,
            self.dynamics_batch,
            self.dynamics_lr,
            self.dynamics_dropout,
            self.dynamics_noise,
            self.vae_bottleneck,
            self.vae_hidden,
            self.vae_beta,
            self.vae_steps,
            self.vae_batch,
            self.vae_lr,
            self.vae_min_samples,
            self.plan_samples,
            self.plan_elites,
            self.plan_horizon,
            self.plan_w,
            self.plan_max_iters,
            self.plan_threshold,
            weights,
            self.eval_scenes,
            self.eval_goal_actions,
            self.eval_budget,
            self.eval_execute_per_replan,
        )
    }

    pub fn episodes(&self) -> usize {
        if self.data_episodes == 0 {
            crate::data::default_episode_count(self.env_kind)
        } else {
            self.data_episodes
        }
    }

    pub fn policy_spec(&self) -> PolicySpec {
        if self.data_policy == "uniform" {
            PolicySpec::Uniform
        } else {
            PolicySpec::Gapped {
                gap: ActionBox {
                    lo: self.data_gap_lo,
                    hi: self.data_gap_hi,
                },
            }
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            grid: self.env_grid,
            latent_dim: self.encoder_latent_dim,
            hidden: self.encoder_hidden,
            lr: self.encoder_lr,
            steps: self.encoder_steps,
            batch: self.encoder_batch,
            noise: self.encoder_noise,
        }
    }

    pub fn transition_config(&self) -> TransitionConfig {
        TransitionConfig {
            h: self.dynamics_h,
            f: self.dynamics_f,
            hidden: self.dynamics_hidden,
            lr: self.dynamics_lr,
            steps: self.dynamics_steps,
            batch: self.dynamics_batch,
            dropout: if self.dynamics_dropout > 0.0 {
                Some(self.dynamics_dropout)
            } else {
                None
            },
            noise: self.dynamics_noise,
        }
    }

    pub fn vae_config(&self) -> VaeConfig {
        let min_samples = if self.vae_min_samples == 0 {
            match self.env_kind {
                EnvKind::Granular => 100,
                EnvKind::Rope => 500,
            }
        } else {
            self.vae_min_samples
        };
        VaeConfig {
            bottleneck: self.vae_bottleneck,
            hidden: self.vae_hidden,
            beta: self.vae_beta,
            lr: self.vae_lr,
            steps: self.vae_steps,
            batch: self.vae_batch,
            min_samples,
        }
    }

    pub fn plan_config(&self) -> PlanConfig {
        PlanConfig {
            samples: self.plan_samples,
            elites: self.plan_elites,
            horizon: self.plan_horizon,
            weight: self.plan_w,
            max_iters: self.plan_max_iters,
            threshold: self.plan_threshold,
            seed: self.seed,
        }
    }

    /// Scene seeds for evaluation, derived from the global seed.
    pub fn scene_seeds(&self) -> Vec<u64> {
        (0..self.eval_scenes)
            .map(|i| mix(self.seed, SCENE_SALT + i as u64))
            .collect()
    }

    pub fn eval_spec(&self) -> EvalSpec {
        EvalSpec {
            kind: self.env_kind,
            weights: self.eval_weights.clone(),
            scene_seeds: self.scene_seeds(),
            goal_actions: self.eval_goal_actions,
            goal_policy: self.policy_spec(),
            budget: self.eval_budget,
            execute_per_replan: self.eval_execute_per_replan,
            plan: self.plan_config(),
        }
    }
}

fn parse_f64_4(value: &str) -> Result<[f64; 4]> {
    let vals: Vec<f64> = value
        .split_whitespace()
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("cannot parse {v:?} as f64")))
        })
        .collect::<Result<_>>()?;
    vals.try_into()
        .map_err(|_| Error::InvalidConfig("expected exactly 4 space-separated values".into()))
}
