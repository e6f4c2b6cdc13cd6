//! Qualitative rollout strips: actual observations on top, decoded
//! predicted latents below, goal image in the last column of both rows.

use std::path::Path;

use crate::data::Episode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::Observation;
use crate::world::{TransitionModel, Window, WorldModel};

/// A composed raster strip: `height = 2 * grid`, `width = cols * grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct StripImage<T> {
    pub pixels: Vec<T>,
    pub width: usize,
    pub height: usize,
    pub grid: usize,
}

impl<T: Scalar> StripImage<T> {
    fn blit(&mut self, obs: &Observation<T>, row_block: usize, col_block: usize) {
        let g = self.grid;
        for r in 0..g {
            for c in 0..g {
                let dst = (row_block * g + r) * self.width + col_block * g + c;
                self.pixels[dst] = obs.at(r, c);
            }
        }
    }

    /// Extracts one `grid x grid` block back out of the strip.
    pub fn frame(&self, row_block: usize, col_block: usize) -> Observation<T> {
        let g = self.grid;
        let mut pixels = Vec::with_capacity(g * g);
        for r in 0..g {
            for c in 0..g {
                pixels.push(self.pixels[(row_block * g + r) * self.width + col_block * g + c]);
            }
        }
        Observation { pixels, grid: g }
    }
}

/// Composes the strip for one episode.
///
/// With `T` actions in the episode the strip has `T + 1` columns: columns
/// `0..T` hold the post-action frames (observed on top, predicted below)
/// and the last column holds the goal image in both rows. The top row is a
/// bit-exact passthrough of the stored observations.
pub fn compose_strip<T: Scalar>(
    world: &WorldModel<T>,
    model: &TransitionModel<T>,
    episode: &Episode<T>,
    goal: &Observation<T>,
) -> Result<StripImage<T>> {
    if episode.actions.len() % model.f != 0 {
        return Err(Error::InvalidConfig(format!(
            "episode length {} is not divisible by F={}",
            episode.actions.len(),
            model.f
        )));
    }
    let steps = episode.actions.len() / model.f;
    let g = world.grid;
    let cols = steps + 1;
    let mut strip = StripImage {
        pixels: vec![T::zero(); cols * g * 2 * g],
        width: cols * g,
        height: 2 * g,
        grid: g,
    };

    let window = Window::start(model.h, model.f, world.encode(&episode.observations[0])?);
    let predicted = model.rollout(&window, &episode.actions)?;

    for k in 0..steps {
        strip.blit(&episode.observations[(k + 1) * model.f], 0, k);
        strip.blit(&world.decode(&predicted[k])?, 1, k);
    }
    strip.blit(goal, 0, steps);
    strip.blit(goal, 1, steps);
    Ok(strip)
}

/// Writes the strip as an 8-bit grayscale PNG.
pub fn write_strip_png<T: Scalar>(strip: &StripImage<T>, path: &Path) -> Result<()> {
    let mut img = image::GrayImage::new(strip.width as u32, strip.height as u32);
    for (i, px) in strip.pixels.iter().enumerate() {
        let v = (px.f64().clamp(0.0, 1.0) * 255.0).round() as u8;
        let x = (i % strip.width) as u32;
        let y = (i / strip.width) as u32;
        img.put_pixel(x, y, image::Luma([v]));
    }
    img.save(path)
        .map_err(|e| Error::Load(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, PolicySpec};
    use crate::sim::EnvKind;
    use crate::world::{
        encode_episodes, pretrain_encoder, train_transition, EncoderConfig, TransitionConfig,
    };

    fn strip_fixture() -> (
        WorldModel<f32>,
        TransitionModel<f32>,
        Episode<f32>,
        Observation<f32>,
    ) {
        let ds = generate::<f32>(EnvKind::Granular, PolicySpec::Uniform, 15, 6, 16, 4).unwrap();
        let obs: Vec<_> = ds.all_observations().cloned().collect();
        let cfg = EncoderConfig {
            grid: 16,
            latent_dim: 8,
            hidden: 24,
            steps: 150,
            batch: 16,
            lr: 2e-3,
            ..EncoderConfig::default()
        };
        let (world, _) = pretrain_encoder(&obs, &cfg, 0).unwrap();
        let eps = encode_episodes(&world, &ds).unwrap();
        let dyn_cfg = TransitionConfig {
            hidden: 16,
            steps: 100,
            batch: 16,
            ..TransitionConfig::default()
        };
        let (model, _) = train_transition(&eps, &[], &dyn_cfg, 1).unwrap();
        let episode = ds.episodes[0].clone();
        let goal = episode.observations.last().unwrap().clone();
        (world, model, episode, goal)
    }

    #[test]
    fn layout_arithmetic_matches_the_contract() {
        let (world, model, episode, goal) = strip_fixture();
        let strip = compose_strip(&world, &model, &episode, &goal).unwrap();
        let t = episode.actions.len();
        assert_eq!(strip.width, (t + 1) * 16);
        assert_eq!(strip.height, 2 * 16);
    }

    #[test]
    fn top_row_is_a_bit_exact_passthrough() {
        let (world, model, episode, goal) = strip_fixture();
        let strip = compose_strip(&world, &model, &episode, &goal).unwrap();
        for k in 0..episode.actions.len() {
            assert_eq!(strip.frame(0, k), episode.observations[k + 1]);
        }
        assert_eq!(strip.frame(0, episode.actions.len()), goal);
        assert_eq!(strip.frame(1, episode.actions.len()), goal);
    }

    #[test]
    fn bottom_row_matches_an_independent_rollout_decode() {
        let (world, model, episode, goal) = strip_fixture();
        let strip = compose_strip(&world, &model, &episode, &goal).unwrap();
        // Recompute the predicted frames independently.
        let window = Window::start(1, 1, world.encode(&episode.observations[0]).unwrap());
        let latents = model.rollout(&window, &episode.actions).unwrap();
        for (k, z) in latents.iter().enumerate() {
            assert_eq!(strip.frame(1, k), world.decode(z).unwrap());
        }
    }

    #[test]
    fn png_write_succeeds() {
        let (world, model, episode, goal) = strip_fixture();
        let strip = compose_strip(&world, &model, &episode, &goal).unwrap();
        let path = std::env::temp_dir().join("pushplan-strip-test.png");
        write_strip_png(&strip, &path).unwrap();
        assert!(path.exists());
    }
}
