//! Planning with a learned latent world model and a VAE novelty guard.
//!
//! The pipeline, end to end:
//!
//! 1. [`sim`] provides deterministic 2D pusher environments (granular piles
//!    and a rope chain) with a raster renderer and the Chamfer metric.
//! 2. [`data`] generates seeded random-policy datasets, optionally with a
//!    deliberate coverage gap in action space, and persists them.
//! 3. [`world`] trains a frozen observation autoencoder and a latent
//!    transition model on top of it.
//! 4. [`vae`] trains a small variational autoencoder on training latents;
//!    its reconstruction error scores how far a latent is from the
//!    training distribution.
//! 5. [`plan`] runs cross-entropy-method trajectory optimization where each
//!    candidate trajectory pays its goal cost plus a weighted sum of
//!    per-step novelty scores, wrapped in an MPC replanning loop.
//! 6. [`eval`] drives the weight-sweep experiments and reports Chamfer
//!    distances as CSV.
//!
//! All numeric kernels are generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the concrete pipeline runs on [`Real`] (`f32`) with `f64` accumulation in
//! losses and statistics.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod plan;
pub mod scalar;
pub mod sim;
pub mod vae;
pub mod world;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type the concrete pipeline runs on.
pub type Real = f32;

/// Dense network at pipeline precision.
pub type Net = nn::DenseNet<Real>;

/// Latent state vector at pipeline precision.
pub type Latent = world::Latent<Real>;

/// Splitmix64 finalizer; the workspace-wide seed derivation primitive.
///
/// Every stage that needs its own RNG stream derives it as
/// `mix(parent_seed, salt)` so streams never alias across stages.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.rotate_left(32) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Every network architecture the pipeline instantiates, built at the given
/// seed with default dimensions. Used by the gradient-correctness gate.
pub fn all_architectures(seed: u64) -> Vec<(&'static str, Net)> {
    let enc = world::EncoderConfig::default();
    let dyn_cfg = world::TransitionConfig::default();
    let vae_cfg = vae::VaeConfig::default();
    vec![
        ("observation-encoder", world::encoder_net(&enc, seed).unwrap()),
        ("observation-decoder", world::decoder_net(&enc, seed).unwrap()),
        (
            "latent-transition",
            world::transition_net(&dyn_cfg, enc.latent_dim, seed).unwrap(),
        ),
        (
            "novelty-vae-encoder",
            vae::vae_encoder_net(&vae_cfg, enc.latent_dim, seed).unwrap(),
        ),
        (
            "novelty-vae-decoder",
            vae::vae_decoder_net(&vae_cfg, enc.latent_dim, seed).unwrap(),
        ),
    ]
}
