//! Model-predictive control loop: plan, execute the first few actions in
//! the simulator, re-encode, re-plan.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::{chamfer, render, step, Action, Observation, ParticleState, Vec2};
use crate::vae::NoveltyVae;
use crate::world::{action_group, TransitionModel, Window, WorldModel};

use super::{plan, CostBreakdown, Diagnostics, PlanConfig};

#[derive(Debug, Clone, Copy)]
pub struct MpcConfig {
    pub plan: PlanConfig,
    /// Model steps executed per replan (each is `F` environment actions).
    pub execute_per_replan: usize,
    /// Total environment actions to execute.
    pub budget: usize,
}

/// Full record of one MPC episode.
#[derive(Debug, Clone)]
pub struct MpcTrace<T> {
    /// Visited states, starting with the initial one (`budget + 1` entries).
    pub states: Vec<ParticleState<T>>,
    /// Executed actions (`budget` entries).
    pub actions: Vec<Action<T>>,
    /// Incumbent cost of each replan.
    pub replan_costs: Vec<CostBreakdown>,
    /// Planner diagnostics per replan.
    pub replan_diagnostics: Vec<Diagnostics>,
    /// Novelty score of the *observed* latent after each executed action;
    /// measures whether the executed plan actually stayed in distribution.
    pub executed_novelty: Vec<f64>,
    /// Chamfer distance between the final cloud and the goal cloud.
    pub final_chamfer: f64,
}

impl<T: Scalar> MpcTrace<T> {
    pub fn mean_executed_novelty(&self) -> f64 {
        if self.executed_novelty.is_empty() {
            return 0.0;
        }
        self.executed_novelty.iter().sum::<f64>() / self.executed_novelty.len() as f64
    }
}

/// Runs the replanning loop for a fixed budget of environment actions.
pub fn mpc_run<T: Scalar>(
    world: &WorldModel<T>,
    model: &TransitionModel<T>,
    vae: &NoveltyVae<T>,
    initial: &ParticleState<T>,
    goal_obs: &Observation<T>,
    goal_cloud: &[Vec2<T>],
    cfg: &MpcConfig,
) -> Result<MpcTrace<T>> {
    if cfg.execute_per_replan == 0 || cfg.execute_per_replan > cfg.plan.horizon {
        return Err(Error::InvalidConfig(format!(
            "execute_per_replan {} must be in 1..=horizon ({})",
            cfg.execute_per_replan, cfg.plan.horizon
        )));
    }
    if cfg.budget == 0 {
        return Err(Error::InvalidConfig("mpc budget must be >= 1".into()));
    }

    let z_goal = world.encode(goal_obs)?;
    let mut state = initial.clone();
    let mut window = Window::start(model.h, model.f, world.encode(&render(&state, world.grid))?);

    let mut trace = MpcTrace {
        states: vec![state.clone()],
        actions: Vec::with_capacity(cfg.budget),
        replan_costs: Vec::new(),
        replan_diagnostics: Vec::new(),
        executed_novelty: Vec::with_capacity(cfg.budget),
        final_chamfer: 0.0,
    };

    let mut replan_index = 0u64;
    while trace.actions.len() < cfg.budget {
        let mut plan_cfg = cfg.plan;
        plan_cfg.seed = crate::mix(cfg.plan.seed, replan_index);
        let (planned, cost, diag) = plan(model, vae, &window, &z_goal, &plan_cfg)?;
        trace.replan_costs.push(cost);
        trace.replan_diagnostics.push(diag);
        replan_index += 1;

        let n_exec = (cfg.execute_per_replan * model.f).min(cfg.budget - trace.actions.len());
        let mut pending_group: Vec<Action<T>> = Vec::with_capacity(model.f);
        for action in planned.iter().take(n_exec) {
            state = step(&state, action);
            trace.states.push(state.clone());
            trace.actions.push(*action);
            pending_group.push(*action);

            let z = world.encode(&render(&state, world.grid))?;
            trace.executed_novelty.push(vae.score(&z)?);

            // The window advances on whole model steps (F actions).
            if pending_group.len() == model.f {
                window.advance(action_group(&pending_group), z);
                pending_group.clear();
            }
        }
    }

    trace.final_chamfer = chamfer(&state.positions, goal_cloud)?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, PolicySpec};
    use crate::sim::EnvKind;
    use crate::vae::{train_vae, VaeConfig};
    use crate::world::{
        encode_episodes, pretrain_encoder, train_transition, EncoderConfig, TransitionConfig,
    };

    /// Tiny trained stack for fast MPC smoke tests.
    fn tiny_stack() -> (
        crate::world::WorldModel<f32>,
        crate::world::TransitionModel<f32>,
        NoveltyVae<f32>,
    ) {
        let ds = generate::<f32>(EnvKind::Granular, PolicySpec::Uniform, 12, 8, 16, 77).unwrap();
        let obs: Vec<_> = ds.all_observations().cloned().collect();
        let enc_cfg = EncoderConfig {
            grid: 16,
            latent_dim: 8,
            hidden: 24,
            steps: 200,
            batch: 16,
            lr: 2e-3,
            ..EncoderConfig::default()
        };
        let (world, _) = pretrain_encoder(&obs, &enc_cfg, 1).unwrap();
        let eps = encode_episodes(&world, &ds).unwrap();
        let dyn_cfg = TransitionConfig {
            hidden: 24,
            steps: 200,
            batch: 32,
            ..TransitionConfig::default()
        };
        let (model, _) = train_transition(&eps, &[], &dyn_cfg, 2).unwrap();
        let latents: Vec<_> = eps.iter().flat_map(|e| e.latents.iter().cloned()).collect();
        let vae_cfg = VaeConfig {
            bottleneck: 3,
            hidden: 16,
            steps: 200,
            min_samples: 50,
            ..VaeConfig::default()
        };
        let (vae, _) = train_vae(&latents, &vae_cfg, 3).unwrap();
        (world, model, vae)
    }

    #[test]
    fn trace_accounting_is_exact() {
        let (world, model, vae) = tiny_stack();
        let initial = crate::sim::reset::<f32>(EnvKind::Granular, 5);
        let goal_state = step(&initial, &Action::new(-0.5f32, 0.0, 0.5, 0.2));
        let goal_obs = render(&goal_state, 16);

        let cfg = MpcConfig {
            plan: PlanConfig {
                samples: 24,
                elites: 4,
                horizon: 3,
                max_iters: 3,
                seed: 11,
                ..PlanConfig::default()
            },
            execute_per_replan: 2,
            budget: 5,
        };
        let trace = mpc_run(
            &world,
            &model,
            &vae,
            &initial,
            &goal_obs,
            &goal_state.positions,
            &cfg,
        )
        .unwrap();

        assert_eq!(trace.actions.len(), 5, "action count == budget exactly");
        assert_eq!(trace.states.len(), 6);
        assert_eq!(trace.executed_novelty.len(), 5);
        // 2 actions per replan, budget 5 -> 3 replans.
        assert_eq!(trace.replan_costs.len(), 3);

        // Final Chamfer equals an independent recomputation.
        let recomputed = chamfer(
            &trace.states.last().unwrap().positions,
            &goal_state.positions,
        )
        .unwrap();
        assert_eq!(trace.final_chamfer, recomputed);
    }

    #[test]
    fn degenerate_mpc_is_a_single_plan() {
        let (world, model, vae) = tiny_stack();
        let initial = crate::sim::reset::<f32>(EnvKind::Granular, 6);
        let goal_obs = render(&initial, 16);
        let cfg = MpcConfig {
            plan: PlanConfig {
                samples: 16,
                elites: 4,
                horizon: 3,
                max_iters: 2,
                seed: 1,
                ..PlanConfig::default()
            },
            execute_per_replan: 3,
            budget: 3,
        };
        let trace = mpc_run(
            &world,
            &model,
            &vae,
            &initial,
            &goal_obs,
            &initial.positions,
            &cfg,
        )
        .unwrap();
        assert_eq!(trace.replan_costs.len(), 1);
        assert_eq!(trace.actions.len(), 3);
    }

    #[test]
    fn execute_per_replan_must_fit_the_horizon() {
        let (world, model, vae) = tiny_stack();
        let initial = crate::sim::reset::<f32>(EnvKind::Granular, 6);
        let goal_obs = render(&initial, 16);
        let cfg = MpcConfig {
            plan: PlanConfig {
                horizon: 2,
                ..PlanConfig::default()
            },
            execute_per_replan: 3,
            budget: 3,
        };
        assert!(mpc_run(
            &world,
            &model,
            &vae,
            &initial,
            &goal_obs,
            &initial.positions,
            &cfg
        )
        .is_err());
    }
}
