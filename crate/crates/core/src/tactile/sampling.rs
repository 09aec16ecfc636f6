//! Fixed-size point sets.

use crate::geometry::Point3;

use super::TactileError;

/// Indices of `n` points chosen from `points`.
///
/// With more than `n` inputs this is farthest-point sampling seeded at the
/// first point; ties go to the lowest index. With `n` or fewer, the inputs
/// are repeated cyclically (`repeated` is set when any index recurs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sampling {
    pub indices: Vec<usize>,
    pub repeated: bool,
}

pub fn farthest_point_sample(points: &[Point3], n: usize) -> Result<Sampling, TactileError> {
    let m = points.len();
    if m == 0 {
        return Err(TactileError::EmptyInput);
    }
    if m <= n {
        return Ok(Sampling {
            indices: (0..n).map(|i| i % m).collect(),
            repeated: m < n,
        });
    }
    let mut indices = Vec::with_capacity(n);
    let mut nearest = vec![f64::INFINITY; m];
    let mut current = 0;
    for _ in 0..n {
        indices.push(current);
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < nearest[i] {
                nearest[i] = d;
            }
            // Strict comparison keeps the lowest index on ties.
            if nearest[i] > best.0 {
                best = (nearest[i], i);
            }
        }
        current = best.1;
    }
    Ok(Sampling {
        indices,
        repeated: false,
    })
}

/// `n` points from `points` by [`farthest_point_sample`].
pub fn resample_points(points: &[Point3], n: usize) -> Result<(Vec<Point3>, bool), TactileError> {
    let s = farthest_point_sample(points, n)?;
    Ok((s.indices.iter().map(|i| points[*i]).collect(), s.repeated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Quadratic-per-step reference: recompute every candidate's distance to
    /// the whole selected set from scratch.
    fn brute_force_fps(points: &[Point3], n: usize) -> Vec<usize> {
        let mut sel = vec![0usize];
        while sel.len() < n {
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, p) in points.iter().enumerate() {
                let d = sel
                    .iter()
                    .map(|s| (p - points[*s]).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                if d > best.0 {
                    best = (d, i);
                }
            }
            sel.push(best.1);
        }
        sel
    }

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    #[test]
    fn matches_brute_force_oracle() {
        let pts = random_points(1000, 3);
        let fast = farthest_point_sample(&pts, 256).unwrap();
        assert_eq!(fast.indices, brute_force_fps(&pts, 256));
        assert!(!fast.repeated);
    }

    #[test]
    fn exact_size_is_identity() {
        let pts = random_points(256, 4);
        let s = farthest_point_sample(&pts, 256).unwrap();
        assert_eq!(s.indices, (0..256).collect::<Vec<_>>());
    }

    #[test]
    fn small_inputs_repeat() {
        let pts = random_points(100, 5);
        let s = farthest_point_sample(&pts, 256).unwrap();
        assert_eq!(s.indices.len(), 256);
        assert!(s.repeated);
        assert!(s.indices.iter().all(|i| *i < 100));
    }

    #[test]
    fn empty_input() {
        assert_eq!(farthest_point_sample(&[], 256), Err(TactileError::EmptyInput));
    }

    #[test]
    fn ties_pick_lowest_index() {
        let pts = vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.1, 0.0, 0.0),
        ];
        assert_eq!(farthest_point_sample(&pts, 2).unwrap().indices, vec![0, 1]);
    }
}
