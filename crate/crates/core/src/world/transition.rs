//! Latent transition model: predicts the next latent from a sliding window
//! of `H` past latents and `H` action groups (each group is `F` consecutive
//! environment actions treated as one model step).

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mix;
use crate::nn::{
    load_net, mse, save_net, Activation, Adam, AdamConfig, DenseNet, FrozenNet, Gradients,
};
use crate::scalar::Scalar;
use crate::sim::Action;

use super::{Latent, WorldModel};

#[derive(Debug, Clone, Copy)]
pub struct TransitionConfig {
    /// Sliding-window length in model steps.
    pub h: usize,
    /// Frame skip: environment actions per model step.
    pub f: usize,
    pub hidden: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    /// Input dropout rate during training; `None` disables it (the default).
    pub dropout: Option<f64>,
    /// Gaussian noise stddev added to window inputs during training;
    /// regularizes against encoder jitter. 0 disables.
    pub noise: f64,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        TransitionConfig {
            h: 1,
            f: 1,
            hidden: 128,
            lr: 1e-3,
            steps: 2500,
            batch: 64,
            dropout: None,
            noise: 0.0,
        }
    }
}

impl TransitionConfig {
    pub fn input_dim(&self, latent_dim: usize) -> usize {
        self.h * latent_dim + self.h * 4 * self.f
    }

    fn validate(&self) -> Result<()> {
        if self.h == 0 || self.f == 0 {
            return Err(Error::InvalidConfig("H and F must be >= 1".into()));
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("dropout rate {p} outside [0,1)")));
            }
        }
        Ok(())
    }
}

/// 2 hidden tanh layers, identity head.
pub fn transition_net<T: Scalar>(
    cfg: &TransitionConfig,
    latent_dim: usize,
    seed: u64,
) -> Result<DenseNet<T>> {
    DenseNet::new(
        &[cfg.input_dim(latent_dim), cfg.hidden, cfg.hidden, latent_dim],
        &[Activation::Tanh, Activation::Tanh, Activation::Identity],
        mix(seed, 0xD14A),
    )
}

/// Rolling window of `H` latents plus the `H - 1` most recent action groups.
/// Calling [`TransitionModel::predict`] supplies the newest group.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<T> {
    latents: Vec<Latent<T>>,
    action_groups: Vec<Vec<T>>,
}

impl<T: Scalar> Window<T> {
    /// Window at the start of an episode: the initial latent replicated `H`
    /// times and zero action groups as padding.
    pub fn start(h: usize, f: usize, z0: Latent<T>) -> Self {
        Window {
            latents: vec![z0; h],
            action_groups: vec![vec![T::zero(); 4 * f]; h.saturating_sub(1)],
        }
    }

    pub fn new(latents: Vec<Latent<T>>, action_groups: Vec<Vec<T>>) -> Result<Self> {
        if latents.is_empty() || action_groups.len() + 1 != latents.len() {
            return Err(Error::ContractViolation(format!(
                "window needs H latents and H-1 action groups, got {} and {}",
                latents.len(),
                action_groups.len()
            )));
        }
        Ok(Window {
            latents,
            action_groups,
        })
    }

    pub fn latest(&self) -> &Latent<T> {
        self.latents.last().expect("windows are non-empty")
    }

    /// Shifts the window forward by one model step.
    pub fn advance(&mut self, group: Vec<T>, z_next: Latent<T>) {
        self.action_groups.push(group);
        self.latents.push(z_next);
        self.latents.remove(0);
        self.action_groups.remove(0);
    }
}

/// Flattens `F` consecutive environment actions into one model-step group.
pub fn action_group<T: Scalar>(actions: &[Action<T>]) -> Vec<T> {
    let mut out = Vec::with_capacity(actions.len() * 4);
    for a in actions {
        out.extend_from_slice(&a.as_array());
    }
    out
}

/// Trained transition model; immutable and shareable across planner workers.
///
/// The network regresses the latent *delta*: `z_next = z_latest + net(x)`.
/// The residual form anchors an untrained or uncertain model at the
/// identity map, which is the right prior for slow-moving latents.
#[derive(Debug, Clone)]
pub struct TransitionModel<T> {
    pub net: FrozenNet<T>,
    pub h: usize,
    pub f: usize,
    pub latent_dim: usize,
    /// Recorded for the checkpoint sidecar; inference never applies dropout.
    pub dropout: Option<f64>,
}

impl<T: Scalar> TransitionModel<T> {
    /// One-step prediction from a window plus the newest action group.
    /// Pure function; dropout is disabled at inference.
    pub fn predict(&self, window: &Window<T>, group: &[T]) -> Result<Latent<T>> {
        if window.latents.len() != self.h {
            return Err(Error::dim("window latents", self.h, window.latents.len()));
        }
        if group.len() != 4 * self.f {
            return Err(Error::dim("action group", 4 * self.f, group.len()));
        }
        let mut x = Vec::with_capacity(self.net.input_dim());
        for z in &window.latents {
            if z.dim() != self.latent_dim {
                return Err(Error::dim("window latent dim", self.latent_dim, z.dim()));
            }
            x.extend_from_slice(&z.0);
        }
        for g in &window.action_groups {
            if g.len() != 4 * self.f {
                return Err(Error::dim("window action group", 4 * self.f, g.len()));
            }
            x.extend_from_slice(g);
        }
        x.extend_from_slice(group);
        let delta = self.net.forward(&x)?;
        let base = window.latest();
        Ok(Latent(
            base.0.iter().zip(&delta).map(|(z, d)| *z + *d).collect(),
        ))
    }

    /// Autoregressive rollout: each predicted latent enters the next window.
    /// `actions.len()` must be divisible by `F`; returns one latent per
    /// model step, in order.
    pub fn rollout(&self, window: &Window<T>, actions: &[Action<T>]) -> Result<Vec<Latent<T>>> {
        if actions.len() % self.f != 0 {
            return Err(Error::InvalidConfig(format!(
                "rollout got {} actions, not divisible by F={}",
                actions.len(),
                self.f
            )));
        }
        let steps = actions.len() / self.f;
        let mut cur = window.clone();
        let mut out = Vec::with_capacity(steps);
        for k in 0..steps {
            let group = action_group(&actions[k * self.f..(k + 1) * self.f]);
            let z = self.predict(&cur, &group)?;
            cur.advance(group, z.clone());
            out.push(z);
        }
        Ok(out)
    }
}

/// Latent-space view of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeLatents<T> {
    pub latents: Vec<Latent<T>>,
    pub actions: Vec<Action<T>>,
}

/// Encodes every observation of every episode through the frozen encoder.
pub fn encode_episodes<T: Scalar>(
    world: &WorldModel<T>,
    dataset: &Dataset<T>,
) -> Result<Vec<EpisodeLatents<T>>> {
    dataset
        .episodes
        .iter()
        .map(|ep| {
            let latents = ep
                .observations
                .iter()
                .map(|o| world.encode(o))
                .collect::<Result<_>>()?;
            Ok(EpisodeLatents {
                latents,
                actions: ep.actions.clone(),
            })
        })
        .collect()
}

struct TrainingWindow<'a, T> {
    inputs: Vec<T>,
    /// Regression target for the residual head: `z_{k+1} - z_k`.
    delta: Vec<T>,
    target: &'a Latent<T>,
    /// Last window latent; the identity baseline predicts this.
    last: &'a Latent<T>,
}

fn build_windows<'a, T: Scalar>(
    episodes: &'a [EpisodeLatents<T>],
    h: usize,
    f: usize,
) -> Vec<TrainingWindow<'a, T>> {
    let mut out = Vec::new();
    for ep in episodes {
        let frames = ep.actions.len();
        let n_steps = frames / f;
        for k in (h - 1)..n_steps {
            let mut inputs = Vec::new();
            for back in (0..h).rev() {
                inputs.extend_from_slice(&ep.latents[(k - back) * f].0);
            }
            for back in (0..h).rev() {
                let lo = (k - back) * f;
                inputs.extend(action_group(&ep.actions[lo..lo + f]));
            }
            let target = &ep.latents[(k + 1) * f];
            let last = &ep.latents[k * f];
            let delta = target
                .0
                .iter()
                .zip(&last.0)
                .map(|(t, l)| *t - *l)
                .collect();
            out.push(TrainingWindow {
                inputs,
                delta,
                target,
                last,
            });
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TransitionReport {
    pub curve: Vec<(usize, f64)>,
    pub train_windows: usize,
    pub val_windows: usize,
    /// Held-out one-step latent MSE of the trained model.
    pub val_mse: f64,
    /// Held-out MSE of predicting `z_{i+1} = z_i`.
    pub identity_mse: f64,
}

/// Teacher-forced next-latent regression.
pub fn train_transition<T: Scalar>(
    train: &[EpisodeLatents<T>],
    val: &[EpisodeLatents<T>],
    cfg: &TransitionConfig,
    seed: u64,
) -> Result<(TransitionModel<T>, TransitionReport)> {
    cfg.validate()?;
    let latent_dim = train
        .first()
        .and_then(|e| e.latents.first())
        .map(|z| z.dim())
        .ok_or(Error::EmptyInput("transition training episodes"))?;

    let windows = build_windows(train, cfg.h, cfg.f);
    if windows.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "window (H={}, F={}) is longer than the training episodes",
            cfg.h, cfg.f
        )));
    }
    let val_windows = build_windows(val, cfg.h, cfg.f);

    let mut net = transition_net::<T>(cfg, latent_dim, seed)?;
    let mut opt = Adam::new(&net, AdamConfig::with_lr(cfg.lr))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x7A41));

    let scale = T::of(2.0 / (latent_dim as f64 * cfg.batch as f64));
    let keep = cfg.dropout.map(|p| 1.0 - p);

    let mut curve = Vec::new();
    let mut perturbed = Vec::new();
    for step in 0..cfg.steps {
        let mut grads = Gradients::zeros_like(&net);
        let mut batch_loss = 0.0f64;
        for _ in 0..cfg.batch {
            let w = &windows[rng.gen_range(0..windows.len())];
            let x: &[T] = if keep.is_some() || cfg.noise > 0.0 {
                perturbed.clear();
                perturbed.extend(w.inputs.iter().map(|&v| {
                    let mut v = v;
                    if cfg.noise > 0.0 {
                        let eps: f64 = rand_distr::Distribution::sample(
                            &rand_distr::StandardNormal,
                            &mut rng,
                        );
                        v = v + T::of(cfg.noise * eps);
                    }
                    if let Some(keep) = keep {
                        if rng.gen::<f64>() < keep {
                            v * T::of(1.0 / keep)
                        } else {
                            T::zero()
                        }
                    } else {
                        v
                    }
                }));
                &perturbed
            } else {
                &w.inputs
            };
            let trace = net.forward_trace(x)?;
            let y = trace.output();
            batch_loss += mse(y, &w.delta);
            let upstream: Vec<T> = y
                .iter()
                .zip(&w.delta)
                .map(|(yi, ti)| scale * (*yi - *ti))
                .collect();
            grads.accumulate(&net.backward(&trace, &upstream)?);
        }
        batch_loss /= cfg.batch as f64;
        if !batch_loss.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                step: step as u64,
            });
        }
        opt.apply(&mut net, &grads)?;
        if step % 100 == 0 {
            curve.push((step, batch_loss));
        }
    }

    let model = TransitionModel {
        net: net.freeze(),
        h: cfg.h,
        f: cfg.f,
        latent_dim,
        dropout: cfg.dropout,
    };

    let (mut val_mse, mut identity_mse) = (0.0f64, 0.0f64);
    for w in &val_windows {
        let delta = model.net.forward(&w.inputs)?;
        let pred: Vec<T> = w.last.0.iter().zip(&delta).map(|(z, d)| *z + *d).collect();
        val_mse += mse(&pred, &w.target.0);
        identity_mse += mse(&w.last.0, &w.target.0);
    }
    if !val_windows.is_empty() {
        val_mse /= val_windows.len() as f64;
        identity_mse /= val_windows.len() as f64;
    }

    Ok((
        model,
        TransitionReport {
            curve,
            train_windows: windows.len(),
            val_windows: val_windows.len(),
            val_mse,
            identity_mse,
        },
    ))
}

const TRANSITION_META: &str = "transition v1";

pub fn save_transition<T: Scalar>(model: &TransitionModel<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_net(model.net.as_net(), &dir.join("transition.net"))?;
    let mut meta = String::new();
    meta.push_str(TRANSITION_META);
    meta.push('\n');
    meta.push_str(&format!("h: {}\n", model.h));
    meta.push_str(&format!("f: {}\n", model.f));
    meta.push_str(&format!("latent_dim: {}\n", model.latent_dim));
    meta.push_str(&format!(
        "dropout: {}\n",
        model.dropout.map_or("off".to_string(), |p| p.to_string())
    ));
    fs::write(dir.join("transition.txt"), meta)?;
    Ok(())
}

pub fn load_transition<T: Scalar>(dir: &Path) -> Result<TransitionModel<T>> {
    let meta = fs::read_to_string(dir.join("transition.txt"))
        .map_err(|e| Error::Load(format!("{}: {e}", dir.join("transition.txt").display())))?;
    let mut lines = meta.lines();
    if lines.next().unwrap_or_default() != TRANSITION_META {
        return Err(Error::Load("unsupported transition format".into()));
    }
    let mut h = None;
    let mut f = None;
    let mut latent_dim = None;
    let mut dropout = None;
    for line in lines {
        let Some((key, value)) = line.split_once(':') else {
            return Err(Error::Load(format!("malformed transition meta {line:?}")));
        };
        let value = value.trim();
        match key {
            "h" => h = Some(parse_usize(value)?),
            "f" => f = Some(parse_usize(value)?),
            "latent_dim" => latent_dim = Some(parse_usize(value)?),
            "dropout" => {
                dropout = Some(if value == "off" {
                    None
                } else {
                    Some(value.parse::<f64>().map_err(|_| {
                        Error::Load(format!("cannot parse dropout {value:?}"))
                    })?)
                })
            }
            other => return Err(Error::Load(format!("unknown transition key {other:?}"))),
        }
    }
    let h = h.ok_or_else(|| Error::Load("transition meta missing h".into()))?;
    let f = f.ok_or_else(|| Error::Load("transition meta missing f".into()))?;
    let latent_dim =
        latent_dim.ok_or_else(|| Error::Load("transition meta missing latent_dim".into()))?;
    let net: DenseNet<T> = load_net(&dir.join("transition.net"))?;
    if net.input_dim() != h * latent_dim + h * 4 * f || net.output_dim() != latent_dim {
        return Err(Error::Load(
            "transition net dimensions disagree with sidecar".into(),
        ));
    }
    Ok(TransitionModel {
        net: net.freeze(),
        h,
        f,
        latent_dim,
        dropout: dropout.flatten(),
    })
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Load(format!("cannot parse {s:?} as usize")))
}
