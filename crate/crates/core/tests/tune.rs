//! Manual tuning probes; run with `cargo test --test tune -- --ignored --nocapture`.

use pushplan_core::config::RunConfig;
use pushplan_core::data::{generate, split, PolicySpec};
use pushplan_core::eval::{dataset_latents, evaluate, gap_latents, ood_report, EvalSpec};
use pushplan_core::sim::EnvKind;
use pushplan_core::vae::train_vae;
use pushplan_core::world::{
    constant_baseline_mse, encode_episodes, pretrain_encoder, reconstruction_mse,
    train_transition,
};

#[test]
#[ignore]
fn probe_encoder_convergence() {
    let ds = generate::<f32>(
        EnvKind::Granular,
        PolicySpec::gapped_default(),
        100,
        20,
        32,
        1,
    )
    .unwrap();
    let (train, val) = split(&ds, 0.1, 1).unwrap();
    let train_obs: Vec<_> = train.all_observations().cloned().collect();
    let val_obs: Vec<_> = val.all_observations().cloned().collect();
    let baseline = constant_baseline_mse(&val_obs).unwrap();
    println!(
        "train {} obs, val {} obs, baseline {baseline:.6}",
        train_obs.len(),
        val_obs.len()
    );

    for (steps, lr) in [(2500usize, 2e-3)] {
        let mut cfg = RunConfig::default().encoder_config();
        cfg.steps = steps;
        cfg.lr = lr;
        let t0 = std::time::Instant::now();
        let (model, report) = pretrain_encoder(&train_obs, &cfg, 7).unwrap();
        let recon = reconstruction_mse(&model, &val_obs).unwrap();
        println!(
            "steps {steps} lr {lr}: val recon {recon:.6} ({:.2}x baseline), train loss {:.6}, {:.1}s",
            recon / baseline,
            report.final_loss,
            t0.elapsed().as_secs_f64()
        );
    }
}

#[test]
#[ignore]
fn probe_full_stack() {
    let cfg = RunConfig::default();
    for train_seed in [1u64, 2, 3] {
        let t0 = std::time::Instant::now();
        let ds = generate::<f32>(
            EnvKind::Granular,
            cfg.policy_spec(),
            100,
            20,
            32,
            train_seed,
        )
        .unwrap();
        let (train, val) = split(&ds, cfg.data_val_fraction, train_seed).unwrap();
        let train_obs: Vec<_> = train.all_observations().cloned().collect();
        let val_obs: Vec<_> = val.all_observations().cloned().collect();

        let (world, _) = pretrain_encoder(&train_obs, &cfg.encoder_config(), train_seed).unwrap();
        let recon = reconstruction_mse(&world, &val_obs).unwrap();
        let baseline = constant_baseline_mse(&val_obs).unwrap();

        let train_eps = encode_episodes(&world, &train).unwrap();
        let val_eps = encode_episodes(&world, &val).unwrap();
        let (model, dyn_report) =
            train_transition(&train_eps, &val_eps, &cfg.transition_config(), train_seed).unwrap();

        let train_latents: Vec<_> = train_eps
            .iter()
            .flat_map(|e| e.latents.iter().cloned())
            .collect();
        let (vae, _) = train_vae(&train_latents, &cfg.vae_config(), train_seed).unwrap();

        let id = dataset_latents(&world, &val).unwrap();
        let ood_seeds: Vec<u64> = (100..110u64).collect();
        let ood = gap_latents(&world, EnvKind::Granular, &cfg.policy_spec(), &ood_seeds, 4, 9)
            .unwrap();
        let report = ood_report(&vae, &id, &ood, 16).unwrap();

        println!(
            "seed {train_seed}: recon {:.2}x baseline | dyn val {:.5} vs identity {:.5} | ood ratio {:.2} (id med {:.5}, ood med {:.5}) | stack {:.0}s",
            recon / baseline,
            dyn_report.val_mse,
            dyn_report.identity_mse,
            report.ratio,
            report.median_id,
            report.median_ood,
            t0.elapsed().as_secs_f64()
        );

        let spec = EvalSpec {
            kind: EnvKind::Granular,
            weights: vec![0.0, 0.25],
            scene_seeds: cfg.scene_seeds(),
            goal_actions: cfg.eval_goal_actions,
            goal_policy: cfg.policy_spec(),
            budget: cfg.eval_budget,
            execute_per_replan: cfg.eval_execute_per_replan,
            plan: cfg.plan_config(),
        };
        let t1 = std::time::Instant::now();
        let outcome = evaluate(&world, &model, &vae, &spec).unwrap();
        for s in &outcome.summary {
            println!(
                "  w={}: chamfer {:.5} ± {:.5}, novelty {:.5}",
                s.weight, s.mean_chamfer, s.std_chamfer, s.mean_novelty
            );
        }
        println!("  eval {:.0}s", t1.elapsed().as_secs_f64());
    }
}

#[test]
#[ignore]
fn probe_ood() {
    use pushplan_core::eval::median;
    use pushplan_core::vae::VaeConfig;

    let cfg = RunConfig::default();
    let train_seed = 1u64;
    let ds = generate::<f32>(
        EnvKind::Granular,
        cfg.policy_spec(),
        100,
        20,
        32,
        train_seed,
    )
    .unwrap();
    let (train, val) = split(&ds, cfg.data_val_fraction, train_seed).unwrap();
    let train_obs: Vec<_> = train.all_observations().cloned().collect();
    let (world, _) = pretrain_encoder(&train_obs, &cfg.encoder_config(), train_seed).unwrap();

    let train_latents = dataset_latents(&world, &train).unwrap();
    let val_latents = dataset_latents(&world, &val).unwrap();

    let variants: Vec<(&str, VaeConfig)> = vec![
        ("base M=8 b=1e-3", cfg.vae_config()),
        (
            "M=4",
            VaeConfig {
                bottleneck: 4,
                ..cfg.vae_config()
            },
        ),
        (
            "M=8 steps=5000",
            VaeConfig {
                steps: 5000,
                ..cfg.vae_config()
            },
        ),
    ];

    for (name, vcfg) in variants {
        let (vae, _) = train_vae(&train_latents, &vcfg, train_seed).unwrap();
        let med = |set: &[pushplan_core::Latent]| -> f64 {
            median(&set.iter().map(|z| vae.score(z).unwrap()).collect::<Vec<_>>())
        };
        print!(
            "{name}: train {:.4} val {:.4}",
            med(&train_latents),
            med(&val_latents)
        );
        let ood_seeds: Vec<u64> = (100..115u64).collect();
        for depth in [2usize, 4, 8, 12] {
            let ood = gap_latents(&world, EnvKind::Granular, &cfg.policy_spec(), &ood_seeds, depth, 9).unwrap();
            // Only keep the deepest quarter of each chain to measure drift.
            let tail: Vec<_> = ood
                .chunks(depth)
                .flat_map(|c| c[(depth * 3 / 4).min(depth - 1)..].to_vec())
                .collect();
            print!(" | d{depth}: all {:.4} tail {:.4}", med(&ood), med(&tail));
        }
        println!();
    }
}

#[test]
#[ignore]
fn probe_pretrain_corpus() {
    use pushplan_core::eval::median;

    let cfg = RunConfig::default();
    let train_seed = 1u64;

    // Separate, larger uniform-policy corpus for the frozen encoder.
    let corpus = generate::<f32>(EnvKind::Granular, PolicySpec::Uniform, 400, 20, 32, 900 + train_seed).unwrap();
    let corpus_obs: Vec<_> = corpus.all_observations().cloned().collect();
    let mut enc_cfg = cfg.encoder_config();
    enc_cfg.steps = 3000;
    let t0 = std::time::Instant::now();
    let (world, _) = pretrain_encoder(&corpus_obs, &enc_cfg, train_seed).unwrap();
    println!("encoder on {} obs: {:.0}s", corpus_obs.len(), t0.elapsed().as_secs_f64());

    // Small gapped task dataset.
    let ds = generate::<f32>(EnvKind::Granular, cfg.policy_spec(), 100, 20, 32, train_seed).unwrap();
    let (train, val) = split(&ds, cfg.data_val_fraction, train_seed).unwrap();

    let train_latents = dataset_latents(&world, &train).unwrap();
    let val_latents = dataset_latents(&world, &val).unwrap();

    // Dynamics with residual head.
    let train_eps = encode_episodes(&world, &train).unwrap();
    let val_eps = encode_episodes(&world, &val).unwrap();
    let (_, dyn_report) = train_transition(&train_eps, &val_eps, &cfg.transition_config(), train_seed).unwrap();
    println!("dyn val {:.5} vs identity {:.5}", dyn_report.val_mse, dyn_report.identity_mse);

    let (vae, _) = train_vae(&train_latents, &cfg.vae_config(), train_seed).unwrap();
    let med = |set: &[pushplan_core::Latent]| -> f64 {
        median(&set.iter().map(|z| vae.score(z).unwrap()).collect::<Vec<_>>())
    };
    print!("vae: train {:.4} val {:.4}", med(&train_latents), med(&val_latents));
    let ood_seeds: Vec<u64> = (100..115u64).collect();
    for depth in [2usize, 4, 8] {
        let ood = gap_latents(&world, EnvKind::Granular, &cfg.policy_spec(), &ood_seeds, depth, 9).unwrap();
        print!(" | d{depth}: {:.4} (ratio {:.2})", med(&ood), med(&ood) / med(&val_latents));
    }
    println!();
}

#[test]
#[ignore]
fn probe_fixes() {
    use pushplan_core::eval::median;
    use pushplan_core::vae::VaeConfig;
    use pushplan_core::world::TransitionConfig;

    let cfg = RunConfig::default();
    let train_seed = 1u64;

    let ds = generate::<f32>(EnvKind::Granular, cfg.policy_spec(), 100, 20, 32, train_seed).unwrap();
    let (train, val) = split(&ds, cfg.data_val_fraction, train_seed).unwrap();
    let train_obs: Vec<_> = train.all_observations().cloned().collect();
    let (world, _) = pretrain_encoder(&train_obs, &cfg.encoder_config(), train_seed).unwrap();

    let train_eps = encode_episodes(&world, &train).unwrap();
    let val_eps = encode_episodes(&world, &val).unwrap();

    // Dynamics variants.
    for (name, dcfg) in [
        ("base", cfg.transition_config()),
        ("noise.05", TransitionConfig { noise: 0.05, ..cfg.transition_config() }),
        ("noise.1", TransitionConfig { noise: 0.1, ..cfg.transition_config() }),
        ("noise.1 s1200", TransitionConfig { noise: 0.1, steps: 1200, ..cfg.transition_config() }),
        ("noise.1 h64", TransitionConfig { noise: 0.1, hidden: 64, ..cfg.transition_config() }),
        ("noise.2 h64", TransitionConfig { noise: 0.2, hidden: 64, ..cfg.transition_config() }),
    ] {
        let (_, r) = train_transition(&train_eps, &val_eps, &dcfg, train_seed).unwrap();
        println!("dyn {name}: val {:.5} vs identity {:.5} ({})", r.val_mse, r.identity_mse,
                 if r.val_mse < r.identity_mse { "BEATS" } else { "fails" });
    }

    // VAE variants scored against depth-matched OOD chains (20 gap actions).
    let train_latents = dataset_latents(&world, &train).unwrap();
    let val_latents = dataset_latents(&world, &val).unwrap();
    let ood_seeds: Vec<u64> = (100..115u64).collect();
    let ood = gap_latents(&world, EnvKind::Granular, &cfg.policy_spec(), &ood_seeds, 20, 9).unwrap();

    for (name, vcfg) in [
        ("base", cfg.vae_config()),
        ("steps1200", VaeConfig { steps: 1200, ..cfg.vae_config() }),
        ("M=6", VaeConfig { bottleneck: 6, ..cfg.vae_config() }),
        ("M=12", VaeConfig { bottleneck: 12, ..cfg.vae_config() }),
        ("M=16", VaeConfig { bottleneck: 16, ..cfg.vae_config() }),
    ] {
        let (vae, _) = train_vae(&train_latents, &vcfg, train_seed).unwrap();
        let med = |set: &[pushplan_core::Latent]| -> f64 {
            median(&set.iter().map(|z| vae.score(z).unwrap()).collect::<Vec<_>>())
        };
        println!(
            "vae {name}: train {:.4} val {:.4} ood20 {:.4} ratio {:.2}",
            med(&train_latents), med(&val_latents), med(&ood), med(&ood) / med(&val_latents)
        );
    }
}
