//! The two-part world model: a frozen observation encoder with a paired
//! decoder for visualization, and a trainable latent transition model.
//!
//! The encoder stand-in is a trained-then-frozen autoencoder rather than a
//! random projection: the decoder can visualize predicted latents and
//! latent distances stay meaningful for the planner's goal cost. Latents
//! are standardized (per-dimension mean/std over the training set) before
//! anything downstream consumes them; the statistics live in the model.

mod transition;

pub use transition::{
    action_group, encode_episodes, load_transition, save_transition, train_transition,
    transition_net, EpisodeLatents, TransitionConfig, TransitionModel, TransitionReport, Window,
};

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mix;
use crate::nn::{load_net, mse, save_net, Activation, Adam, AdamConfig, DenseNet, FrozenNet};
use crate::scalar::Scalar;
use crate::sim::Observation;

/// Latent state vector, produced by `encode` or `predict`.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent<T>(pub Vec<T>);

impl<T: Scalar> Latent<T> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Mean squared error between two latents.
pub fn latent_mse<T: Scalar>(a: &Latent<T>, b: &Latent<T>) -> f64 {
    mse(&a.0, &b.0)
}

/// Per-dimension standardization statistics of the training latents.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> LatentStats<T> {
    /// Computed with `f64` accumulation; standard deviations are floored at
    /// 1e-6 so degenerate dimensions cannot blow up the standardization.
    pub fn fit(latents: &[Vec<T>]) -> Result<Self> {
        if latents.is_empty() {
            return Err(Error::EmptyInput("latent statistics"));
        }
        let d = latents[0].len();
        let n = latents.len() as f64;
        let mut mean = vec![0.0f64; d];
        for z in latents {
            for (m, v) in mean.iter_mut().zip(z) {
                *m += v.f64();
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0f64; d];
        for z in latents {
            for ((s, v), m) in var.iter_mut().zip(z).zip(&mean) {
                let dlt = v.f64() - m;
                *s += dlt * dlt;
            }
        }
        let std: Vec<T> = var
            .iter()
            .map(|s| T::of((s / n).sqrt().max(1e-6)))
            .collect();
        Ok(LatentStats {
            mean: mean.into_iter().map(T::of).collect(),
            std,
        })
    }
}

/// Encoder/decoder training configuration.
#[derive(Debug, Clone, Copy)]
pub struct EncoderConfig {
    pub grid: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    /// Denoising regularization: stddev of Gaussian pixel noise added to
    /// the input (targets stay clean). Tames memorization on small
    /// datasets; 0 disables.
    pub noise: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            grid: crate::sim::DEFAULT_GRID,
            latent_dim: 32,
            hidden: 128,
            lr: 2e-3,
            steps: 2500,
            batch: 32,
            noise: 0.05,
        }
    }
}

pub fn encoder_net<T: Scalar>(cfg: &EncoderConfig, seed: u64) -> Result<DenseNet<T>> {
    DenseNet::new(
        &[cfg.grid * cfg.grid, cfg.hidden, cfg.latent_dim],
        &[Activation::Tanh, Activation::Identity],
        mix(seed, 0xE0C0),
    )
}

pub fn decoder_net<T: Scalar>(cfg: &EncoderConfig, seed: u64) -> Result<DenseNet<T>> {
    DenseNet::new(
        &[cfg.latent_dim, cfg.hidden, cfg.grid * cfg.grid],
        &[Activation::Tanh, Activation::Sigmoid],
        mix(seed, 0xDEC0),
    )
}

/// Frozen observation encoder + decoder + latent statistics.
#[derive(Debug, Clone)]
pub struct WorldModel<T> {
    pub encoder: FrozenNet<T>,
    pub decoder: FrozenNet<T>,
    pub stats: LatentStats<T>,
    pub grid: usize,
    pub latent_dim: usize,
}

impl<T: Scalar> WorldModel<T> {
    /// Raw (unstandardized) latent.
    pub fn encode_raw(&self, obs: &Observation<T>) -> Result<Latent<T>> {
        obs.validate_grid(self.grid)?;
        Ok(Latent(self.encoder.forward(&obs.pixels)?))
    }

    /// Standardized latent; the representation all downstream consumers use.
    pub fn encode(&self, obs: &Observation<T>) -> Result<Latent<T>> {
        let raw = self.encode_raw(obs)?;
        Ok(Latent(
            raw.0
                .iter()
                .zip(&self.stats.mean)
                .zip(&self.stats.std)
                .map(|((v, m), s)| (*v - *m) / *s)
                .collect(),
        ))
    }

    /// Decodes a *standardized* latent back to an image.
    pub fn decode(&self, z: &Latent<T>) -> Result<Observation<T>> {
        if z.dim() != self.latent_dim {
            return Err(Error::dim("latent", self.latent_dim, z.dim()));
        }
        let raw: Vec<T> = z
            .0
            .iter()
            .zip(&self.stats.mean)
            .zip(&self.stats.std)
            .map(|((v, m), s)| *v * *s + *m)
            .collect();
        Ok(Observation {
            pixels: self.decoder.forward(&raw)?,
            grid: self.grid,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    /// `(step, batch pixel MSE)` sampled every 100 steps.
    pub curve: Vec<(usize, f64)>,
    pub final_loss: f64,
}

/// Trains the observation autoencoder by pixel MSE, then freezes both
/// halves and fits the latent statistics on the same observations.
pub fn pretrain_encoder<T: Scalar>(
    observations: &[Observation<T>],
    cfg: &EncoderConfig,
    seed: u64,
) -> Result<(WorldModel<T>, PretrainReport)> {
    if observations.len() < 100 {
        return Err(Error::InvalidConfig(format!(
            "encoder pretraining needs >= 100 observations, got {}",
            observations.len()
        )));
    }
    for obs in observations {
        obs.validate_grid(cfg.grid)?;
    }

    let mut encoder = encoder_net::<T>(cfg, seed)?;
    let mut decoder = decoder_net::<T>(cfg, seed)?;
    let mut opt_enc = Adam::new(&encoder, AdamConfig::with_lr(cfg.lr))?;
    let mut opt_dec = Adam::new(&decoder, AdamConfig::with_lr(cfg.lr))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xBA7C4));

    let n_pixels = cfg.grid * cfg.grid;
    let scale = T::of(2.0 / (n_pixels as f64 * cfg.batch as f64));

    let mut curve = Vec::new();
    let mut last = 0.0f64;
    let mut noisy: Vec<T> = Vec::new();
    for step in 0..cfg.steps {
        let mut grads_enc = crate::nn::Gradients::zeros_like(&encoder);
        let mut grads_dec = crate::nn::Gradients::zeros_like(&decoder);
        let mut batch_loss = 0.0f64;
        for _ in 0..cfg.batch {
            let x = &observations[rng.gen_range(0..observations.len())].pixels;
            let input: &[T] = if cfg.noise > 0.0 {
                noisy.clear();
                noisy.extend(x.iter().map(|&v| {
                    let eps: f64 = rand_distr::Distribution::sample(
                        &rand_distr::StandardNormal,
                        &mut rng,
                    );
                    v + T::of(cfg.noise * eps)
                }));
                &noisy
            } else {
                x
            };
            let enc_trace = encoder.forward_trace(input)?;
            let dec_trace = decoder.forward_trace(enc_trace.output())?;
            let y = dec_trace.output();
            batch_loss += mse(y, x);
            let upstream: Vec<T> = y
                .iter()
                .zip(x)
                .map(|(yi, xi)| scale * (*yi - *xi))
                .collect();
            let g_dec = decoder.backward(&dec_trace, &upstream)?;
            let g_enc = encoder.backward(&enc_trace, &g_dec.input)?;
            grads_dec.accumulate(&g_dec);
            grads_enc.accumulate(&g_enc);
        }
        batch_loss /= cfg.batch as f64;
        if !batch_loss.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                step: step as u64,
            });
        }
        opt_dec.apply(&mut decoder, &grads_dec)?;
        opt_enc.apply(&mut encoder, &grads_enc)?;
        last = batch_loss;
        if step % 100 == 0 {
            curve.push((step, batch_loss));
        }
    }

    let encoder = encoder.freeze();
    let decoder = decoder.freeze();

    let latents: Vec<Vec<T>> = observations
        .iter()
        .map(|o| encoder.forward(&o.pixels))
        .collect::<Result<_>>()?;
    let stats = LatentStats::fit(&latents)?;

    Ok((
        WorldModel {
            encoder,
            decoder,
            stats,
            grid: cfg.grid,
            latent_dim: cfg.latent_dim,
        },
        PretrainReport {
            curve,
            final_loss: last,
        },
    ))
}

/// Mean pixel MSE of `decode(encode(x))` over a set of observations.
pub fn reconstruction_mse<T: Scalar>(
    model: &WorldModel<T>,
    observations: &[Observation<T>],
) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::EmptyInput("reconstruction set"));
    }
    let mut acc = 0.0f64;
    for obs in observations {
        let recon = model.decode(&model.encode(obs)?)?;
        acc += mse(&recon.pixels, &obs.pixels);
    }
    Ok(acc / observations.len() as f64)
}

/// MSE of the best constant-image predictor for a set: the per-pixel mean
/// image of the set itself, computed independently of any model.
pub fn constant_baseline_mse<T: Scalar>(observations: &[Observation<T>]) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::EmptyInput("baseline set"));
    }
    let n_px = observations[0].pixels.len();
    let n = observations.len() as f64;
    let mut mean = vec![0.0f64; n_px];
    for obs in observations {
        for (m, v) in mean.iter_mut().zip(&obs.pixels) {
            *m += v.f64();
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut acc = 0.0f64;
    for obs in observations {
        let mut s = 0.0f64;
        for (m, v) in mean.iter().zip(&obs.pixels) {
            let d = v.f64() - m;
            s += d * d;
        }
        acc += s / n_px as f64;
    }
    Ok(acc / n)
}

const WORLD_META: &str = "world v1";

pub fn save_world<T: Scalar>(model: &WorldModel<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_net(model.encoder.as_net(), &dir.join("encoder.net"))?;
    save_net(model.decoder.as_net(), &dir.join("decoder.net"))?;
    let mut meta = String::new();
    meta.push_str(WORLD_META);
    meta.push('\n');
    meta.push_str(&format!("grid: {}\n", model.grid));
    meta.push_str(&format!("latent_dim: {}\n", model.latent_dim));
    meta.push_str(&format!("stats_mean: {}\n", join(&model.stats.mean)));
    meta.push_str(&format!("stats_std: {}\n", join(&model.stats.std)));
    fs::write(dir.join("world.txt"), meta)?;
    Ok(())
}

pub fn load_world<T: Scalar>(dir: &Path) -> Result<WorldModel<T>> {
    let meta = fs::read_to_string(dir.join("world.txt"))
        .map_err(|e| Error::Load(format!("{}: {e}", dir.join("world.txt").display())))?;
    let mut lines = meta.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != WORLD_META {
        return Err(Error::Load(format!(
            "unsupported world model format {magic:?}"
        )));
    }
    let mut grid = None;
    let mut latent_dim = None;
    let mut mean: Option<Vec<T>> = None;
    let mut std: Option<Vec<T>> = None;
    for line in lines {
        let Some((key, value)) = line.split_once(':') else {
            return Err(Error::Load(format!("malformed world meta line {line:?}")));
        };
        let value = value.trim();
        match key {
            "grid" => grid = Some(parse_usize(value)?),
            "latent_dim" => latent_dim = Some(parse_usize(value)?),
            "stats_mean" => mean = Some(parse_vec(value)?),
            "stats_std" => std = Some(parse_vec(value)?),
            other => return Err(Error::Load(format!("unknown world meta key {other:?}"))),
        }
    }
    let grid = grid.ok_or_else(|| Error::Load("world meta missing grid".into()))?;
    let latent_dim = latent_dim.ok_or_else(|| Error::Load("world meta missing latent_dim".into()))?;
    let mean = mean.ok_or_else(|| Error::Load("world meta missing stats_mean".into()))?;
    let std = std.ok_or_else(|| Error::Load("world meta missing stats_std".into()))?;
    if mean.len() != latent_dim || std.len() != latent_dim {
        return Err(Error::Load("latent statistics length mismatch".into()));
    }

    let encoder: DenseNet<T> = load_net(&dir.join("encoder.net"))?;
    let decoder: DenseNet<T> = load_net(&dir.join("decoder.net"))?;
    if encoder.input_dim() != grid * grid || encoder.output_dim() != latent_dim {
        return Err(Error::Load("encoder dimensions disagree with world meta".into()));
    }
    if decoder.input_dim() != latent_dim || decoder.output_dim() != grid * grid {
        return Err(Error::Load("decoder dimensions disagree with world meta".into()));
    }
    Ok(WorldModel {
        encoder: encoder.freeze(),
        decoder: decoder.freeze(),
        stats: LatentStats { mean, std },
        grid,
        latent_dim,
    })
}

fn join<T: Scalar>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.f64().to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Load(format!("cannot parse {s:?} as usize")))
}

fn parse_vec<T: Scalar>(s: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|v| {
            v.parse::<f64>()
                .map(T::of)
                .map_err(|_| Error::Load(format!("cannot parse {v:?} as float")))
        })
        .collect()
}
