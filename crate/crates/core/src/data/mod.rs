//! Random-policy data generation, persistence and splits.
//!
//! Datasets are generated from a uniform random policy, or from a *gapped*
//! policy that excludes a box of action space. The gap creates a known
//! coverage hole: states reached through gap actions are out of
//! distribution for everything trained on the dataset, which is what the
//! novelty experiments measure.

mod store;

pub use store::{load, save};

use rayon::prelude::*;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mix;
use crate::scalar::Scalar;
use crate::sim::{render, reset, step, Action, EnvKind, Observation, ParticleState, Vec2};

/// Salt separating the action stream from the scene-reset stream.
const ACTION_SALT: u64 = 0x5eed_ac71_0000_0001;

/// Axis-aligned box in the 4-dimensional action space, inclusive bounds,
/// coordinate order `(sx, sy, ex, ey)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionBox {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl ActionBox {
    /// Default coverage gap: the half-space `start-x > 0`.
    pub fn start_x_positive() -> Self {
        ActionBox {
            lo: [0.0, -1.0, -1.0, -1.0],
            hi: [1.0, 1.0, 1.0, 1.0],
        }
    }

    pub fn contains<T: Scalar>(&self, action: &Action<T>) -> bool {
        let a = action.as_array();
        (0..4).all(|i| {
            let v = a[i].f64();
            v >= self.lo[i] && v <= self.hi[i]
        })
    }
}

/// How actions are sampled during data generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    /// Every coordinate i.i.d. uniform in `[-1, 1]`.
    Uniform,
    /// Uniform, but rejection-resampled so no action lands in `gap`.
    Gapped { gap: ActionBox },
}

impl PolicySpec {
    pub fn gapped_default() -> Self {
        PolicySpec::Gapped {
            gap: ActionBox::start_x_positive(),
        }
    }

    pub fn sample<T: Scalar>(&self, rng: &mut impl Rng) -> Action<T> {
        loop {
            let a = Action::new(
                T::of(rng.gen_range(-1.0..1.0)),
                T::of(rng.gen_range(-1.0..1.0)),
                T::of(rng.gen_range(-1.0..1.0)),
                T::of(rng.gen_range(-1.0..1.0)),
            );
            match self {
                PolicySpec::Uniform => return a,
                PolicySpec::Gapped { gap } => {
                    if !gap.contains(&a) {
                        return a;
                    }
                }
            }
        }
    }

    /// Samples only inside the gap region. Used to construct deliberately
    /// out-of-distribution action sequences; errors for a uniform policy.
    pub fn sample_in_gap<T: Scalar>(&self, rng: &mut impl Rng) -> Result<Action<T>> {
        match self {
            PolicySpec::Uniform => Err(Error::ContractViolation(
                "uniform policy has no gap region".into(),
            )),
            PolicySpec::Gapped { gap } => Ok(Action::new(
                T::of(rng.gen_range(gap.lo[0]..=gap.hi[0])),
                T::of(rng.gen_range(gap.lo[1]..=gap.hi[1])),
                T::of(rng.gen_range(gap.lo[2]..=gap.hi[2])),
                T::of(rng.gen_range(gap.lo[3]..=gap.hi[3])),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Uniform => "uniform",
            PolicySpec::Gapped { .. } => "gapped",
        }
    }
}

/// One seeded trajectory: `T` actions and `T + 1` observations/clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<T> {
    pub seed: u64,
    pub observations: Vec<Observation<T>>,
    pub actions: Vec<Action<T>>,
    pub clouds: Vec<Vec<Vec2<T>>>,
}

impl<T: Scalar> Episode<T> {
    pub fn frames(&self) -> usize {
        self.actions.len()
    }

    fn validate(&self) -> Result<()> {
        if self.observations.len() != self.actions.len() + 1
            || self.clouds.len() != self.observations.len()
        {
            return Err(Error::ContractViolation(format!(
                "episode shape: {} observations, {} actions, {} clouds",
                self.observations.len(),
                self.actions.len(),
                self.clouds.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub kind: EnvKind,
    pub grid: usize,
    pub policy: PolicySpec,
    pub seed: u64,
    pub episodes: Vec<Episode<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn observation_count(&self) -> usize {
        self.episodes.iter().map(|e| e.observations.len()).sum()
    }

    pub fn all_observations(&self) -> impl Iterator<Item = &Observation<T>> {
        self.episodes.iter().flat_map(|e| e.observations.iter())
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.episodes {
            e.validate()?;
        }
        Ok(())
    }
}

/// Paper-scale defaults for episode counts.
pub fn default_episode_count(kind: EnvKind) -> usize {
    match kind {
        EnvKind::Granular => 100,
        EnvKind::Rope => 1000,
    }
}

/// Default trajectory length.
pub const DEFAULT_FRAMES: usize = 20;

/// Generates a dataset. Deterministic per seed: episode `i` derives its own
/// seed as `seed ^ mix(i)` so episodes are independent and the set is
/// trivially parallelizable.
pub fn generate<T: Scalar>(
    kind: EnvKind,
    policy: PolicySpec,
    episodes: usize,
    frames: usize,
    grid: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("episodes must be >= 1".into()));
    }
    if frames < 2 {
        return Err(Error::InvalidConfig("frames must be >= 2".into()));
    }

    let eps: Vec<Episode<T>> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let ep_seed = seed ^ mix(i as u64, 0);
            generate_episode(kind, policy, frames, grid, ep_seed)
        })
        .collect();

    Ok(Dataset {
        kind,
        grid,
        policy,
        seed,
        episodes: eps,
    })
}

fn generate_episode<T: Scalar>(
    kind: EnvKind,
    policy: PolicySpec,
    frames: usize,
    grid: usize,
    ep_seed: u64,
) -> Episode<T> {
    let mut state: ParticleState<T> = reset(kind, ep_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(ep_seed ^ ACTION_SALT);

    let mut observations = Vec::with_capacity(frames + 1);
    let mut clouds = Vec::with_capacity(frames + 1);
    let mut actions = Vec::with_capacity(frames);
    observations.push(render(&state, grid));
    clouds.push(state.positions.clone());
    for _ in 0..frames {
        let a = policy.sample::<T>(&mut rng);
        state = step(&state, &a);
        actions.push(a);
        observations.push(render(&state, grid));
        clouds.push(state.positions.clone());
    }
    Episode {
        seed: ep_seed,
        observations,
        actions,
        clouds,
    }
}

/// Episode-level split into (train, validation); no frames leak between the
/// halves. Deterministic per seed; splits keep episodes in original order.
pub fn split<T: Scalar>(
    dataset: &Dataset<T>,
    validation_fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction {validation_fraction} outside (0,1)"
        )));
    }
    let n = dataset.episodes.len();
    let n_val = ((n as f64) * validation_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::InvalidConfig(format!(
            "validation fraction {validation_fraction} yields an empty split for {n} episodes"
        )));
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let mut val_idx: Vec<usize> = indices[..n_val].to_vec();
    let mut train_idx: Vec<usize> = indices[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();

    let pick = |idx: &[usize]| Dataset {
        kind: dataset.kind,
        grid: dataset.grid,
        policy: dataset.policy,
        seed: dataset.seed,
        episodes: idx.iter().map(|&i| dataset.episodes[i].clone()).collect(),
    };
    Ok((pick(&train_idx), pick(&val_idx)))
}

/// Re-simulates every episode from its initial cloud and checks the stored
/// clouds reproduce bit-exactly.
pub fn verify_replay<T: Scalar>(dataset: &Dataset<T>) -> Result<()> {
    for (i, ep) in dataset.episodes.iter().enumerate() {
        ep.validate()?;
        let mut state = ParticleState::from_positions(dataset.kind, ep.clouds[0].clone());
        for (t, action) in ep.actions.iter().enumerate() {
            state = step(&state, action);
            if state.positions != ep.clouds[t + 1] {
                return Err(Error::ContractViolation(format!(
                    "episode {i}: replay diverges from stored cloud at frame {}",
                    t + 1
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(policy: PolicySpec, seed: u64) -> Dataset<f32> {
        generate(EnvKind::Granular, policy, 6, 5, 32, seed).unwrap()
    }

    #[test]
    fn paper_scale_shapes() {
        let ds: Dataset<f32> =
            generate(EnvKind::Granular, PolicySpec::Uniform, 100, 20, 32, 1).unwrap();
        assert_eq!(ds.episodes.len(), 100);
        for ep in &ds.episodes {
            assert_eq!(ep.observations.len(), 21);
            assert_eq!(ep.actions.len(), 20);
            assert_eq!(ep.clouds.len(), 21);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = small(PolicySpec::Uniform, 3);
        let b = small(PolicySpec::Uniform, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn gapped_policy_never_emits_gap_actions() {
        let gap = ActionBox::start_x_positive();
        let ds = small(PolicySpec::Gapped { gap }, 5);
        for ep in &ds.episodes {
            for a in &ep.actions {
                assert!(a.start.x <= 0.0, "gap action leaked: {:?}", a);
            }
        }
    }

    #[test]
    fn replay_reproduces_stored_clouds() {
        let ds = small(PolicySpec::gapped_default(), 11);
        verify_replay(&ds).unwrap();
    }

    #[test]
    fn split_partitions_episodes() {
        let ds: Dataset<f32> =
            generate(EnvKind::Granular, PolicySpec::Uniform, 100, 3, 32, 2).unwrap();
        let (train, val) = split(&ds, 0.1, 7).unwrap();
        assert_eq!(train.episodes.len(), 90);
        assert_eq!(val.episodes.len(), 10);

        let mut seeds: Vec<u64> = train
            .episodes
            .iter()
            .chain(val.episodes.iter())
            .map(|e| e.seed)
            .collect();
        seeds.sort_unstable();
        let mut original: Vec<u64> = ds.episodes.iter().map(|e| e.seed).collect();
        original.sort_unstable();
        assert_eq!(seeds, original, "splits must partition the episode set");

        let (t2, v2) = split(&ds, 0.1, 7).unwrap();
        assert_eq!(train, t2);
        assert_eq!(val, v2);
    }

    #[test]
    fn degenerate_split_fractions_are_rejected() {
        let ds = small(PolicySpec::Uniform, 1);
        assert!(split(&ds, 0.0, 0).is_err());
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 0.01, 0).is_err(), "rounds to zero validation episodes");
    }
}
