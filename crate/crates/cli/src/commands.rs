use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};

use pushplan_core::config::RunConfig;
use pushplan_core::data;
use pushplan_core::eval;
use pushplan_core::plan::{plan, Diagnostics};
use pushplan_core::vae::{load_vae, save_vae, train_vae};
use pushplan_core::world::{
    constant_baseline_mse, encode_episodes, load_transition, load_world, pretrain_encoder,
    reconstruction_mse, save_transition, save_world, train_transition, Window,
};
use pushplan_core::Real;

use crate::{Cli, Cmd};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        cfg.apply_file_text(&text)?;
    }
    for assignment in &cli.overrides {
        let Some((key, value)) = assignment.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {assignment:?}");
        };
        cfg.apply(key.trim(), value.trim())?;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if cfg.workers > 0 {
        // Results are worker-count independent by construction; the pool
        // size only changes wall-clock.
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .context("initializing worker pool")?;
    }

    match cli.cmd {
        Cmd::GenData {
            env,
            episodes,
            frames,
            seed,
            policy,
        } => {
            if let Some(env) = env {
                cfg.apply("env.kind", &env)?;
            }
            if let Some(n) = episodes {
                cfg.apply("data.episodes", &n.to_string())?;
            }
            if let Some(n) = frames {
                cfg.apply("data.frames", &n.to_string())?;
            }
            if let Some(s) = seed {
                cfg.apply("seed", &s.to_string())?;
            }
            if let Some(p) = policy {
                cfg.apply("data.policy", &p)?;
            }
            let dir = run_dir(&cli.out, "gen-data", &cfg)?;
            write_config(&dir, &cfg)?;
            gen_data(&cfg, &dir)
        }
        Cmd::TrainEncoder { data } => {
            let dir = run_dir(&cli.out, "train-encoder", &cfg)?;
            write_config(&dir, &cfg)?;
            train_encoder_cmd(&cfg, &data, &dir)
        }
        Cmd::TrainDynamics { data, world } => {
            let dir = run_dir(&cli.out, "train-dynamics", &cfg)?;
            write_config(&dir, &cfg)?;
            train_dynamics_cmd(&cfg, &data, &world, &dir)
        }
        Cmd::TrainVae { data, world } => {
            let dir = run_dir(&cli.out, "train-vae", &cfg)?;
            write_config(&dir, &cfg)?;
            train_vae_cmd(&cfg, &data, &world, &dir)
        }
        Cmd::Plan {
            world,
            dynamics,
            vae,
            scene_seed,
        } => {
            let dir = run_dir(&cli.out, "plan", &cfg)?;
            write_config(&dir, &cfg)?;
            plan_cmd(&cfg, &world, &dynamics, &vae, scene_seed, &dir)
        }
        Cmd::Eval {
            world,
            dynamics,
            vae,
        } => {
            let dir = run_dir(&cli.out, "eval", &cfg)?;
            write_config(&dir, &cfg)?;
            eval_cmd(&cfg, &world, &dynamics, &vae, &dir)
        }
        Cmd::Sweep {
            world,
            dynamics,
            vae,
            weights,
        } => {
            cfg.apply("eval.weights", &weights)?;
            let dir = run_dir(&cli.out, "sweep", &cfg)?;
            write_config(&dir, &cfg)?;
            eval_cmd(&cfg, &world, &dynamics, &vae, &dir)
        }
        Cmd::OodReport { data, world, vae } => {
            let dir = run_dir(&cli.out, "ood-report", &cfg)?;
            write_config(&dir, &cfg)?;
            ood_report_cmd(&cfg, &data, &world, &vae, &dir)
        }
        Cmd::Strip {
            data,
            world,
            dynamics,
            episode,
        } => {
            let dir = run_dir(&cli.out, "strip", &cfg)?;
            write_config(&dir, &cfg)?;
            strip_cmd(&cfg, &data, &world, &dynamics, episode, &dir)
        }
    }
}

fn run_dir(out: &Option<PathBuf>, command: &str, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = match out {
        Some(d) => d.clone(),
        None => {
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            PathBuf::from("runs").join(format!("{command}-{ts}-s{}", cfg.seed))
        }
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating run dir {}", dir.display()))?;
    Ok(dir)
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(dir.join("config.txt"), cfg.resolved())
        .with_context(|| format!("writing {}", dir.join("config.txt").display()))?;
    Ok(())
}

fn load_dataset(cfg: &RunConfig, path: &Path) -> Result<data::Dataset<Real>> {
    let ds = data::load::<Real>(path)
        .with_context(|| format!("loading dataset from {}", path.display()))?;
    if ds.grid != cfg.env_grid {
        bail!(
            "dataset grid {} does not match env.grid {}",
            ds.grid,
            cfg.env_grid
        );
    }
    Ok(ds)
}

fn gen_data(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ds = data::generate::<Real>(
        cfg.env_kind,
        cfg.policy_spec(),
        cfg.episodes(),
        cfg.data_frames,
        cfg.env_grid,
        cfg.seed,
    )?;
    data::save(&ds, dir)?;
    println!(
        "wrote {} {} episodes x {} frames to {}",
        ds.episodes.len(),
        ds.kind,
        cfg.data_frames,
        dir.display()
    );
    Ok(())
}

fn train_encoder_cmd(cfg: &RunConfig, data: &Path, dir: &Path) -> Result<()> {
    let ds = load_dataset(cfg, data)?;
    let (train, val) = data::split(&ds, cfg.data_val_fraction, cfg.seed)?;
    let train_obs: Vec<_> = train.all_observations().cloned().collect();
    let val_obs: Vec<_> = val.all_observations().cloned().collect();

    let (world, report) = pretrain_encoder(&train_obs, &cfg.encoder_config(), cfg.seed)?;
    save_world(&world, dir)?;

    let recon = reconstruction_mse(&world, &val_obs)?;
    let baseline = constant_baseline_mse(&val_obs)?;
    let mut text = String::new();
    text.push_str(&format!("train_observations: {}\n", train_obs.len()));
    text.push_str(&format!("holdout_observations: {}\n", val_obs.len()));
    text.push_str(&format!("holdout_recon_mse: {recon:.6}\n"));
    text.push_str(&format!("constant_baseline_mse: {baseline:.6}\n"));
    text.push_str(&format!("ratio: {:.4}\n", recon / baseline));
    text.push_str("curve:\n");
    for (step, loss) in &report.curve {
        text.push_str(&format!("  {step} {loss:.6}\n"));
    }
    fs::write(dir.join("report.txt"), text)?;
    println!(
        "encoder trained: holdout recon {recon:.6} vs constant baseline {baseline:.6} ({:.2}x)",
        recon / baseline
    );
    Ok(())
}

fn train_dynamics_cmd(cfg: &RunConfig, data: &Path, world: &Path, dir: &Path) -> Result<()> {
    let ds = load_dataset(cfg, data)?;
    let world = load_world::<Real>(world)?;
    let (train, val) = data::split(&ds, cfg.data_val_fraction, cfg.seed)?;
    let train_eps = encode_episodes(&world, &train)?;
    let val_eps = encode_episodes(&world, &val)?;
    let (model, report) = train_transition(&train_eps, &val_eps, &cfg.transition_config(), cfg.seed)?;
    save_transition(&model, dir)?;

    let mut text = String::new();
    text.push_str(&format!("train_windows: {}\n", report.train_windows));
    text.push_str(&format!("val_windows: {}\n", report.val_windows));
    text.push_str(&format!("val_one_step_mse: {:.6}\n", report.val_mse));
    text.push_str(&format!("identity_baseline_mse: {:.6}\n", report.identity_mse));
    text.push_str("curve:\n");
    for (step, loss) in &report.curve {
        text.push_str(&format!("  {step} {loss:.6}\n"));
    }
    fs::write(dir.join("report.txt"), text)?;
    println!(
        "dynamics trained: held-out one-step MSE {:.6} vs identity {:.6}",
        report.val_mse, report.identity_mse
    );
    Ok(())
}

fn train_vae_cmd(cfg: &RunConfig, data: &Path, world: &Path, dir: &Path) -> Result<()> {
    let ds = load_dataset(cfg, data)?;
    let world = load_world::<Real>(world)?;
    let (train, _) = data::split(&ds, cfg.data_val_fraction, cfg.seed)?;
    let latents = eval::dataset_latents(&world, &train)?;
    let (vae, report) = train_vae(&latents, &cfg.vae_config(), cfg.seed)?;
    save_vae(&vae, dir)?;

    let mut text = String::new();
    text.push_str(&format!("train_latents: {}\n", latents.len()));
    text.push_str(&format!("final_loss: {:.6}\n", report.final_loss));
    text.push_str("curve:\n");
    for (step, loss) in &report.curve {
        text.push_str(&format!("  {step} {loss:.6}\n"));
    }
    fs::write(dir.join("report.txt"), text)?;
    println!("vae trained on {} latents", latents.len());
    Ok(())
}

fn plan_cmd(
    cfg: &RunConfig,
    world: &Path,
    dynamics: &Path,
    vae: &Path,
    scene_seed: u64,
    dir: &Path,
) -> Result<()> {
    let world = load_world::<Real>(world)?;
    let model = load_transition::<Real>(dynamics)?;
    let vae = load_vae::<Real>(vae)?;
    check_dims(&world, model.latent_dim, vae.latent_dim)?;

    let scene = eval::build_scene::<Real>(
        cfg.env_kind,
        world.grid,
        scene_seed,
        cfg.eval_goal_actions,
        &cfg.policy_spec(),
    );
    let z0 = world.encode(&pushplan_core::sim::render(&scene.initial, world.grid))?;
    let z_goal = world.encode(&scene.goal_obs)?;
    let window = Window::start(model.h, model.f, z0);
    let (actions, cost, diag) = plan(&model, &vae, &window, &z_goal, &cfg.plan_config())?;

    write_diagnostics(&diag, &dir.join("plan.csv"))?;
    let mut text = String::new();
    for a in &actions {
        let [sx, sy, ex, ey] = a.as_array();
        text.push_str(&format!("{sx} {sy} {ex} {ey}\n"));
    }
    fs::write(dir.join("actions.txt"), text)?;
    println!(
        "plan for scene {scene_seed}: total {:.6} (goal {:.6} + w*novelty {:.6}), {} iterations",
        cost.total,
        cost.goal,
        cost.total - cost.goal,
        diag.iterations.len()
    );
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, world: &Path, dynamics: &Path, vae: &Path, dir: &Path) -> Result<()> {
    let world = load_world::<Real>(world)?;
    let model = load_transition::<Real>(dynamics)?;
    let vae = load_vae::<Real>(vae)?;
    check_dims(&world, model.latent_dim, vae.latent_dim)?;

    let outcome = eval::evaluate(&world, &model, &vae, &cfg.eval_spec())?;
    fs::write(dir.join("results.csv"), eval::results_csv(&outcome.rows))?;
    fs::write(dir.join("timings.csv"), eval::timings_csv(&outcome.rows))?;
    fs::write(dir.join("summary.txt"), eval::summary_text(&outcome.summary))?;
    print!("{}", eval::summary_text(&outcome.summary));
    println!(
        "{} rows -> {}",
        outcome.rows.len(),
        dir.join("results.csv").display()
    );
    Ok(())
}

fn ood_report_cmd(cfg: &RunConfig, data: &Path, world: &Path, vae: &Path, dir: &Path) -> Result<()> {
    let ds = load_dataset(cfg, data)?;
    let world = load_world::<Real>(world)?;
    let vae = load_vae::<Real>(vae)?;
    check_dims(&world, world.latent_dim, vae.latent_dim)?;
    let policy = cfg.policy_spec();

    let (_, val) = data::split(&ds, cfg.data_val_fraction, cfg.seed)?;
    let id = eval::dataset_latents(&world, &val)?;
    let ood_seeds: Vec<u64> = cfg.scene_seeds();
    let ood = eval::gap_latents(&world, cfg.env_kind, &policy, &ood_seeds, 4, cfg.seed)?;
    let report = eval::ood_report(&vae, &id, &ood, 32)?;

    fs::write(dir.join("ood.csv"), report.histogram_csv())?;
    let text = format!(
        "median_id: {:.6}\nmedian_ood: {:.6}\nratio: {:.4}\n",
        report.median_id, report.median_ood, report.ratio
    );
    fs::write(dir.join("ood.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn strip_cmd(
    cfg: &RunConfig,
    data: &Path,
    world: &Path,
    dynamics: &Path,
    episode: usize,
    dir: &Path,
) -> Result<()> {
    let ds = load_dataset(cfg, data)?;
    let world = load_world::<Real>(world)?;
    let model = load_transition::<Real>(dynamics)?;
    check_dims(&world, model.latent_dim, world.latent_dim)?;
    let Some(ep) = ds.episodes.get(episode) else {
        bail!("dataset has {} episodes, no index {episode}", ds.episodes.len());
    };
    // The episode's own final observation serves as the goal column.
    let goal = ep.observations.last().expect("episodes are non-empty");
    let strip = eval::compose_strip(&world, &model, ep, goal)?;
    let path = dir.join("strip.png");
    eval::write_strip_png(&strip, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn check_dims(world: &pushplan_core::world::WorldModel<Real>, a: usize, b: usize) -> Result<()> {
    if world.latent_dim != a || world.latent_dim != b {
        bail!(
            "latent dimension mismatch: world {} vs transition {} vs vae {}",
            world.latent_dim,
            a,
            b
        );
    }
    Ok(())
}

fn write_diagnostics(diag: &Diagnostics, path: &Path) -> Result<()> {
    fs::write(path, diag.to_csv())?;
    Ok(())
}
