//! Chamfer distance between point clouds.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Vec2;

/// Symmetric Chamfer distance with squared Euclidean terms:
///
/// `CD(A,B) = mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2`
///
/// Accumulated in `f64`. Rejects empty sets.
pub fn chamfer<T: Scalar>(a: &[Vec2<T>], b: &[Vec2<T>]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptyInput("chamfer set A"));
    }
    if b.is_empty() {
        return Err(Error::EmptyInput("chamfer set B"));
    }
    Ok(directed(a, b) + directed(b, a))
}

fn directed<T: Scalar>(from: &[Vec2<T>], to: &[Vec2<T>]) -> f64 {
    let mut acc = 0.0f64;
    for p in from {
        let mut best = f64::INFINITY;
        for q in to {
            let d = p.dist2_f64(*q);
            if d < best {
                best = d;
            }
        }
        acc += best;
    }
    acc / from.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn pt(x: f64, y: f64) -> Vec2<f64> {
        Vec2::of(x, y)
    }

    #[test]
    fn identical_clouds_have_zero_distance() {
        let a = vec![pt(0.1, 0.2), pt(0.5, 0.9)];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn singleton_pair_is_the_seeded_squared_distance() {
        // A={(0,0)}, B={(1,0)}: 1.0 each direction.
        let a = vec![pt(0.0, 0.0)];
        let b = vec![pt(1.0, 0.0)];
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn asymmetric_sizes_average_per_side() {
        // A={(0,0),(1,0)}, B={(0,0)}: 0.5 forward, 0 backward.
        let a = vec![pt(0.0, 0.0), pt(1.0, 0.0)];
        let b = vec![pt(0.0, 0.0)];
        assert_eq!(chamfer(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn rejects_empty_sets() {
        let a = vec![pt(0.0, 0.0)];
        assert!(chamfer::<f64>(&[], &a).is_err());
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn symmetric_on_random_pairs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(1..20);
            let m = rng.gen_range(1..20);
            let a: Vec<Vec2<f32>> =
                (0..n).map(|_| Vec2::of(rng.gen(), rng.gen())).collect();
            let b: Vec<Vec2<f32>> =
                (0..m).map(|_| Vec2::of(rng.gen(), rng.gen())).collect();
            assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
            assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        }
    }
}
