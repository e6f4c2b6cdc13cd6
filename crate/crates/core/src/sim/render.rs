//! Raster renderer: particle states to grayscale observation grids.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ParticleState;

/// Grayscale image on a fixed raster grid, row-major, row 0 at y = 0,
/// values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub pixels: Vec<T>,
    pub grid: usize,
}

impl<T: Scalar> Observation<T> {
    pub fn zeros(grid: usize) -> Self {
        Observation {
            pixels: vec![T::zero(); grid * grid],
            grid,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> T {
        self.pixels[row * self.grid + col]
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn validate_grid(&self, grid: usize) -> Result<()> {
        if self.grid != grid || self.pixels.len() != grid * grid {
            return Err(Error::dim("observation pixels", grid * grid, self.pixels.len()));
        }
        Ok(())
    }
}

/// Visual splat radius. Wider than the physical particle radius so each
/// particle covers a few pixels; sub-pixel dots make the raster useless as
/// a learning signal at desk-scale grids.
pub const SPLAT_RADIUS: f64 = 0.06;
/// Rim ramp width in pixels.
const SPLAT_RAMP_PX: f64 = 2.0;

/// Splats every particle as an anti-aliased disk (linear coverage ramp at
/// the rim) and composites with max. Pure function of the state: the
/// pusher itself is never drawn.
pub fn render<T: Scalar>(state: &ParticleState<T>, grid: usize) -> Observation<T> {
    let g = grid as f64;
    let px = 1.0 / g;
    let radius = SPLAT_RADIUS;
    let ramp = SPLAT_RAMP_PX * px;
    let reach = radius + ramp;

    let mut obs = Observation::zeros(grid);
    for p in &state.positions {
        let (cx, cy) = (p.x.f64(), p.y.f64());
        let col_lo = ((cx - reach) * g).floor().max(0.0) as usize;
        let col_hi = (((cx + reach) * g).ceil() as usize).min(grid);
        let row_lo = ((cy - reach) * g).floor().max(0.0) as usize;
        let row_hi = (((cy + reach) * g).ceil() as usize).min(grid);
        for row in row_lo..row_hi {
            let y = (row as f64 + 0.5) * px;
            for col in col_lo..col_hi {
                let x = (col as f64 + 0.5) * px;
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                let cover = ((radius + 0.5 * ramp - d) / ramp).clamp(0.0, 1.0);
                if cover > 0.0 {
                    let slot = &mut obs.pixels[row * grid + col];
                    // Additive compositing, saturating at white.
                    let sum: T = *slot + T::of(cover);
                    *slot = sum.min(T::one());
                }
            }
        }
    }
    obs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{reset, EnvKind, ParticleState, Vec2, DEFAULT_GRID};

    #[test]
    fn empty_state_renders_black() {
        let state = ParticleState::<f32>::from_positions(EnvKind::Granular, vec![]);
        let obs = render(&state, DEFAULT_GRID);
        assert!(obs.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_centered_particle_peaks_at_the_center() {
        let state = ParticleState::<f32>::from_positions(
            EnvKind::Granular,
            vec![Vec2::of(0.5, 0.5)],
        );
        let obs = render(&state, DEFAULT_GRID);
        let max = obs
            .pixels
            .iter()
            .cloned()
            .fold(0.0f32, f32::max);
        assert!(max > 0.0);
        // (0.5, 0.5) sits on the shared corner of the four central pixels;
        // by symmetry all four carry the image maximum.
        for (row, col) in [(15, 15), (15, 16), (16, 15), (16, 16)] {
            assert_eq!(obs.at(row, col), max);
        }
        // And everything one ring further out is strictly dimmer.
        assert!(obs.at(14, 14) < max);
    }

    #[test]
    fn rendering_is_pure() {
        let state: ParticleState<f32> = reset(EnvKind::Rope, 5);
        let a = render(&state, DEFAULT_GRID);
        let b = render(&state, DEFAULT_GRID);
        assert_eq!(a, b);
    }

    #[test]
    fn pixel_values_stay_in_unit_range() {
        for seed in 0..5u64 {
            let state: ParticleState<f32> = reset(EnvKind::Granular, seed);
            let obs = render(&state, DEFAULT_GRID);
            assert!(obs.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
