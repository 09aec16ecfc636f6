//! Calibration pose pairs satisfying `A·X = Y·B`.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Handedness, RigidTransform};
use crate::handeye::CalibrationSet;

use super::streams::sub_rng;

/// Gaussian noise applied to the controller poses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseNoise {
    /// Per-axis rotation σ, degrees.
    pub rotation_deg: f64,
    /// Per-axis translation σ, meters.
    pub translation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandEyeTruth {
    pub x: RigidTransform,
    pub y: RigidTransform,
    pub noise: PoseNoise,
    pub seed: u64,
}

pub const DEFAULT_PAIRS: usize = 10;

/// A plausible controller-to-gripper offset and tracking-world placement.
pub fn random_ground_truth(seed: u64) -> (RigidTransform, RigidTransform) {
    let mut rng = sub_rng(seed, 10);
    let mut pose = |rot: f64, tr: f64| {
        let w = Vector3::from_fn(|_, _| rng.random_range(-rot..=rot));
        let t = Vector3::from_fn(|_, _| rng.random_range(-tr..=tr));
        RigidTransform::new(UnitQuaternion::from_scaled_axis(w), t, Handedness::Right)
    };
    (pose(0.6, 0.12), pose(1.5, 1.0))
}

/// `n` pairs with end-effector poses spread over ±60° about random axes in a
/// 0.3 m workspace; `A_k = Y · B_k · X⁻¹`, then noise on `A_k`.
pub fn gen_handeye_set(
    x: &RigidTransform,
    y: &RigidTransform,
    n: usize,
    noise: PoseNoise,
    seed: u64,
) -> (CalibrationSet, HandEyeTruth) {
    let mut rng = sub_rng(seed, 11);
    let rot_sigma = noise.rotation_deg.to_radians();
    let rot_noise = Normal::new(0.0, rot_sigma.max(f64::MIN_POSITIVE)).expect("finite");
    let tr_noise = Normal::new(0.0, noise.translation.max(f64::MIN_POSITIVE)).expect("finite");
    let x_inv = x.inverse();
    let pairs = (0..n)
        .map(|_| {
            let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0f64));
            let angle = rng.random_range(-60f64..60.0).to_radians();
            let w = axis.normalize() * angle;
            let t = Vector3::new(
                rng.random_range(0.3..0.6),
                rng.random_range(-0.15..0.15),
                rng.random_range(0.2..0.5),
            );
            let b = RigidTransform::new(UnitQuaternion::from_scaled_axis(w), t, Handedness::Right);
            let a = y.compose(&b).and_then(|p| p.compose(&x_inv)).expect("right-handed");
            let a = if rot_sigma > 0.0 || noise.translation > 0.0 {
                let dw = Vector3::from_fn(|_, _| if rot_sigma > 0.0 { rot_noise.sample(&mut rng) } else { 0.0 });
                let dt = Vector3::from_fn(|_, _| if noise.translation > 0.0 { tr_noise.sample(&mut rng) } else { 0.0 });
                RigidTransform::new(UnitQuaternion::from_scaled_axis(dw) * a.rotation(), a.translation() + dt, Handedness::Right)
            } else {
                a
            };
            (a, b)
        })
        .collect();
    (
        CalibrationSet::new(pairs).expect("n >= 3, right-handed"),
        HandEyeTruth { x: *x, y: *y, noise, seed },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handeye::{pair_residuals, solve_ax_yb};

    #[test]
    fn noiseless_set_satisfies_the_constraint_and_solves_back() {
        let (x, y) = random_ground_truth(3);
        let (cal, truth) = gen_handeye_set(&x, &y, DEFAULT_PAIRS, PoseNoise::default(), 3);
        assert_eq!(cal.len(), 10);
        let (r, t) = pair_residuals(&cal, &truth.x, &truth.y);
        assert!(r < 1e-12 && t < 1e-12);
        let res = solve_ax_yb(&cal).unwrap();
        assert!(res.x.distance(&x) <= 1e-6 && res.y.distance(&y) <= 1e-6);
    }

    #[test]
    fn same_seed_same_set() {
        let (x, y) = random_ground_truth(1);
        let noise = PoseNoise {
            rotation_deg: 0.1,
            translation: 0.001,
        };
        assert_eq!(gen_handeye_set(&x, &y, 10, noise, 5).0, gen_handeye_set(&x, &y, 10, noise, 5).0);
    }
}
