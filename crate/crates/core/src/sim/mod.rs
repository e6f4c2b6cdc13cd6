//! Deterministic 2D manipulation environments.
//!
//! A planar pusher disk sweeps a straight segment through a particle scene;
//! any particle inside the contact radius is projected out radially. The
//! rope variant additionally runs position-based constraint projection to
//! keep link lengths near their rest value. The whole API is
//! pure-functional (state in, state out) and free of RNG except `reset`,
//! so it is safe to call from any number of concurrent rollout workers.

mod chamfer;
mod render;

pub use chamfer::chamfer;
pub use render::{render, Observation};

use std::ops::{Add, Mul, Sub};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pusher disk radius (workspace units).
pub const PUSHER_RADIUS: f64 = 0.06;
/// Particle radius.
pub const PARTICLE_RADIUS: f64 = 0.02;
/// Substeps per pusher sweep.
pub const SUBSTEPS: usize = 16;
/// Rope link rest length.
pub const ROPE_REST_LEN: f64 = 0.05;
/// Constraint projection passes per substep (rope only).
pub const CONSTRAINT_PASSES: usize = 8;
/// Particle counts per environment.
pub const GRANULAR_COUNT: usize = 16;
pub const ROPE_COUNT: usize = 12;
/// Default observation grid size.
pub const DEFAULT_GRID: usize = 32;

/// 2D point / vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Vec2<T> {
    pub fn new(x: T, y: T) -> Self {
        Vec2 { x, y }
    }

    pub fn of(x: f64, y: f64) -> Self {
        Vec2 {
            x: T::of(x),
            y: T::of(y),
        }
    }

    pub fn norm(self) -> T {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn dist(self, other: Self) -> T {
        (self - other).norm()
    }

    /// Squared Euclidean distance in `f64`.
    pub fn dist2_f64(self, other: Self) -> f64 {
        let dx = self.x.f64() - other.x.f64();
        let dy = self.y.f64() - other.y.f64();
        dx * dx + dy * dy
    }

    pub fn clamp_unit_square(self) -> Self {
        Vec2 {
            x: self.x.max(T::zero()).min(T::one()),
            y: self.y.max(T::zero()).min(T::one()),
        }
    }
}

impl<T: Scalar> Add for Vec2<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<T: Scalar> Sub for Vec2<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Scalar> Mul<T> for Vec2<T> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// Which scene a state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Granular,
    Rope,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Granular => "granular",
            EnvKind::Rope => "rope",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "granular" => Ok(EnvKind::Granular),
            "rope" => Ok(EnvKind::Rope),
            other => Err(Error::InvalidConfig(format!(
                "unknown environment {other:?} (expected granular|rope)"
            ))),
        }
    }

    pub fn particle_count(self) -> usize {
        match self {
            EnvKind::Granular => GRANULAR_COUNT,
            EnvKind::Rope => ROPE_COUNT,
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Particle cloud in the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState<T> {
    pub kind: EnvKind,
    pub positions: Vec<Vec2<T>>,
    pub radius: T,
}

impl<T: Scalar> ParticleState<T> {
    pub fn from_positions(kind: EnvKind, positions: Vec<Vec2<T>>) -> Self {
        ParticleState {
            kind,
            positions,
            radius: T::of(PARTICLE_RADIUS),
        }
    }

    /// Max deviation of rope link lengths from the rest length, relative.
    /// Zero for granular states.
    pub fn max_link_strain(&self) -> f64 {
        if self.kind != EnvKind::Rope {
            return 0.0;
        }
        self.positions
            .windows(2)
            .map(|w| (w[0].dist(w[1]).f64() - ROPE_REST_LEN).abs() / ROPE_REST_LEN)
            .fold(0.0, f64::max)
    }
}

/// One pusher motion: start and end point, each coordinate in `[-1, 1]`.
/// Out-of-range components are clipped before execution, and the clipped
/// coordinates map affinely onto the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action<T> {
    pub start: Vec2<T>,
    pub end: Vec2<T>,
}

impl<T: Scalar> Action<T> {
    pub fn new(sx: T, sy: T, ex: T, ey: T) -> Self {
        Action {
            start: Vec2::new(sx, sy),
            end: Vec2::new(ex, ey),
        }
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Action::new(a[0], a[1], a[2], a[3])
    }

    pub fn as_array(self) -> [T; 4] {
        [self.start.x, self.start.y, self.end.x, self.end.y]
    }

    pub fn clipped(self) -> Self {
        let c = |v: T| v.max(-T::one()).min(T::one());
        Action {
            start: Vec2::new(c(self.start.x), c(self.start.y)),
            end: Vec2::new(c(self.end.x), c(self.end.y)),
        }
    }

    /// Maps a clipped `[-1, 1]` coordinate pair into the unit square.
    fn to_workspace(p: Vec2<T>) -> Vec2<T> {
        let half = T::of(0.5);
        Vec2::new((p.x + T::one()) * half, (p.y + T::one()) * half)
    }
}

/// Deterministic scene initialization.
///
/// Granular: 16 particles uniform in a disk of radius 0.2 around the center.
/// Rope: a 12-particle chain with seeded center and direction, links exactly
/// at rest length, placed so the whole chain fits in the unit square.
pub fn reset<T: Scalar>(kind: EnvKind, seed: u64) -> ParticleState<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = match kind {
        EnvKind::Granular => (0..GRANULAR_COUNT)
            .map(|_| {
                let u: f64 = rng.gen();
                let v: f64 = rng.gen();
                let r = 0.2 * u.sqrt();
                let theta = std::f64::consts::TAU * v;
                Vec2::of(0.5 + r * theta.cos(), 0.5 + r * theta.sin())
            })
            .collect(),
        EnvKind::Rope => {
            let cx = 0.35 + 0.3 * rng.gen::<f64>();
            let cy = 0.35 + 0.3 * rng.gen::<f64>();
            let theta = std::f64::consts::TAU * rng.gen::<f64>();
            let (dx, dy) = (theta.cos(), theta.sin());
            let mid = (ROPE_COUNT - 1) as f64 / 2.0;
            (0..ROPE_COUNT)
                .map(|i| {
                    let t = (i as f64 - mid) * ROPE_REST_LEN;
                    Vec2::of(cx + t * dx, cy + t * dy)
                })
                .collect()
        }
    };
    ParticleState::from_positions(kind, positions)
}

/// Executes one pusher motion. Deterministic; all inputs are valid after
/// clipping.
pub fn step<T: Scalar>(state: &ParticleState<T>, action: &Action<T>) -> ParticleState<T> {
    let a = action.clipped();
    let start = Action::to_workspace(a.start);
    let end = Action::to_workspace(a.end);
    let sweep = end - start;

    // Tie-break direction for a particle sitting exactly on the pusher
    // center: along the travel direction, or +x for a stationary pusher.
    let travel = {
        let n = sweep.norm();
        if n > T::of(1e-12) {
            sweep * (T::one() / n)
        } else {
            Vec2::new(T::one(), T::zero())
        }
    };

    let contact = T::of(PUSHER_RADIUS) + state.radius;
    let mut positions = state.positions.clone();
    let inv_sub = T::of(1.0 / SUBSTEPS as f64);

    for s in 1..=SUBSTEPS {
        let t = T::of(s as f64) * inv_sub;
        let center = start + sweep * t;
        for p in positions.iter_mut() {
            let d = *p - center;
            let dist = d.norm();
            if dist < contact {
                let dir = if dist > T::of(1e-9) {
                    d * (T::one() / dist)
                } else {
                    travel
                };
                *p = center + dir * contact;
            }
        }
        for p in positions.iter_mut() {
            *p = p.clamp_unit_square();
        }
        if state.kind == EnvKind::Rope {
            project_rope(&mut positions);
        }
    }

    ParticleState {
        kind: state.kind,
        positions,
        radius: state.radius,
    }
}

/// Gauss-Seidel distance-constraint projection over consecutive links,
/// with box containment re-applied after every pass.
fn project_rope<T: Scalar>(positions: &mut [Vec2<T>]) {
    let rest = T::of(ROPE_REST_LEN);
    let half = T::of(0.5);
    for _ in 0..CONSTRAINT_PASSES {
        for i in 0..positions.len() - 1 {
            let d = positions[i + 1] - positions[i];
            let len = d.norm();
            let dir = if len > T::of(1e-9) {
                d * (T::one() / len)
            } else {
                Vec2::new(T::one(), T::zero())
            };
            let corr = (len - rest) * half;
            positions[i] = positions[i] + dir * corr;
            positions[i + 1] = positions[i + 1] - dir * corr;
        }
        for p in positions.iter_mut() {
            *p = p.clamp_unit_square();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic() {
        let a: ParticleState<f32> = reset(EnvKind::Granular, 42);
        let b: ParticleState<f32> = reset(EnvKind::Granular, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn reset_differs_across_seeds() {
        let a: ParticleState<f32> = reset(EnvKind::Granular, 0);
        let b: ParticleState<f32> = reset(EnvKind::Granular, 1);
        assert_ne!(a, b);
    }

    #[test]
    fn rope_links_start_exactly_at_rest_length() {
        for seed in [0u64, 7, 1234] {
            let s: ParticleState<f64> = reset(EnvKind::Rope, seed);
            assert_eq!(s.positions.len(), ROPE_COUNT);
            for w in s.positions.windows(2) {
                let len = w[0].dist(w[1]);
                assert!(
                    (len - ROPE_REST_LEN).abs() < 1e-12,
                    "link length {len} at seed {seed}"
                );
            }
        }
    }

    #[test]
    fn all_reset_positions_inside_unit_square() {
        for kind in [EnvKind::Granular, EnvKind::Rope] {
            for seed in 0..20u64 {
                let s: ParticleState<f32> = reset(kind, seed);
                for p in &s.positions {
                    assert!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0);
                }
            }
        }
    }

    #[test]
    fn far_away_stationary_pusher_leaves_state_unchanged() {
        let state: ParticleState<f32> = reset(EnvKind::Granular, 3);
        // start == end at the far corner of action space.
        let action = Action::new(-1.0f32, -1.0, -1.0, -1.0);
        let next = step(&state, &action);
        assert_eq!(state, next);
    }

    #[test]
    fn head_on_sweep_leaves_particle_at_contact_distance() {
        // Single particle at the center, sweep along y = 0.5 ending inside
        // the arena. An independent replay of the substep geometry must
        // reproduce the kernel bit for bit.
        let state = ParticleState::<f64>::from_positions(
            EnvKind::Granular,
            vec![Vec2::of(0.5, 0.5)],
        );
        let action = Action::new(-1.0f64, 0.0, 0.2, 0.0); // (0,0.5) -> (0.6,0.5)
        let next = step(&state, &action);

        let contact = PUSHER_RADIUS + PARTICLE_RADIUS;
        let final_center = Vec2::<f64>::of(0.6, 0.5);
        let dist = next.positions[0].dist(final_center);
        assert!(
            (dist - contact).abs() < 1e-12,
            "distance from final pusher center: {dist}"
        );

        // Geometric oracle: replay the substeps independently.
        let mut p = Vec2::<f64>::of(0.5, 0.5);
        let (start, end) = (Vec2::<f64>::of(0.0, 0.5), Vec2::<f64>::of(0.6, 0.5));
        for s in 1..=SUBSTEPS {
            let t = s as f64 * (1.0 / SUBSTEPS as f64);
            let c = start + (end - start) * t;
            let d = p - c;
            if d.norm() < contact {
                let dir = if d.norm() > 1e-9 {
                    d * (1.0 / d.norm())
                } else {
                    Vec2::of(1.0, 0.0)
                };
                p = c + dir * contact;
            }
            p = p.clamp_unit_square();
        }
        assert_eq!(next.positions[0], p);
    }

    #[test]
    fn sweep_past_the_edge_keeps_positions_clamped() {
        let state: ParticleState<f32> = reset(EnvKind::Granular, 5);
        let action = Action::new(-1.0f32, 0.0, 1.0, 0.0);
        let next = step(&state, &action);
        for p in &next.positions {
            assert!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0);
        }
    }

    #[test]
    fn step_is_deterministic_and_conserves_particles() {
        let state: ParticleState<f32> = reset(EnvKind::Granular, 11);
        let action = Action::new(-0.4f32, -0.6, 0.7, 0.5);
        let a = step(&state, &action);
        let b = step(&state, &action);
        assert_eq!(a, b);
        assert_eq!(a.positions.len(), state.positions.len());
    }

    #[test]
    fn rope_strain_stays_in_band_under_random_pushes() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(99);
        use rand::Rng as _;
        let mut state: ParticleState<f32> = reset(EnvKind::Rope, 17);
        for _ in 0..40 {
            let a = Action::new(
                rng.gen_range(-1.0f32..1.0),
                rng.gen_range(-1.0f32..1.0),
                rng.gen_range(-1.0f32..1.0),
                rng.gen_range(-1.0f32..1.0),
            );
            state = step(&state, &a);
            assert!(
                state.max_link_strain() <= 0.10,
                "link strain {} exceeds 10%",
                state.max_link_strain()
            );
        }
    }

    #[test]
    fn exact_center_hit_uses_travel_direction() {
        // Particle placed exactly where the first substep center lands.
        let sweep_start = Vec2::<f64>::of(0.2, 0.5);
        let sweep_end = Vec2::<f64>::of(0.6, 0.5);
        let first_center = sweep_start + (sweep_end - sweep_start) * (1.0 / SUBSTEPS as f64);
        let state =
            ParticleState::<f64>::from_positions(EnvKind::Granular, vec![first_center]);
        let action = Action::new(-0.6f64, 0.0, 0.2, 0.0);
        let next = step(&state, &action);
        // Pushed forward along +x (the travel direction), so it ends ahead
        // of the final center by the contact radius.
        let contact = PUSHER_RADIUS + PARTICLE_RADIUS;
        assert!((next.positions[0].y - 0.5).abs() < 1e-12);
        assert!((next.positions[0].x - (0.6 + contact)).abs() < 1e-12);
    }
}
