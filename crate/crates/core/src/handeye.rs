//! Controller-to-end-effector calibration (`A·X = Y·B`) and conversion of
//! controller trajectories into end-effector actions.
//!
//! `A_k` is the tracked controller pose in the tracking world `W`, `B_k` the
//! robot end-effector pose in the base frame `B`. The unknowns are
//! `X = ^Q T_EE` (controller to end effector) and `Y = ^W T_B`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Handedness, RigidTransform};

/// Largest gripper opening, meters.
pub const MAX_GRIPPER_WIDTH: f64 = 0.08;
/// Smallest relative rotation that counts as excitation, radians.
pub const MIN_EXCITATION: f64 = 5.0 * std::f64::consts::PI / 180.0;
pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandEyeError {
    #[error("need at least 3 pose pairs, got {0}")]
    TooFewPairs(usize),
    #[error("calibration poses must be right-handed")]
    HandednessMismatch,
    #[error("calibration motions do not rotate about two independent axes by at least 5°")]
    InsufficientExcitation,
    #[error("refinement did not converge in {MAX_ITERATIONS} iterations")]
    NonConvergence,
    #[error("trajectory needs at least two poses, got {0}")]
    TooShort(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Pose pairs `(^W T_Q_k, ^B T_EE_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pairs: Vec<(RigidTransform, RigidTransform)>,
}

impl CalibrationSet {
    pub fn new(pairs: Vec<(RigidTransform, RigidTransform)>) -> Result<Self, HandEyeError> {
        if pairs.len() < 3 {
            return Err(HandEyeError::TooFewPairs(pairs.len()));
        }
        if pairs
            .iter()
            .any(|(a, b)| a.handedness() != Handedness::Right || b.handedness() != Handedness::Right)
        {
            return Err(HandEyeError::HandednessMismatch);
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(RigidTransform, RigidTransform)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Same set with every controller pose left-multiplied by `g`.
    pub fn with_world(&self, g: &RigidTransform) -> Self {
        Self {
            pairs: self
                .pairs
                .iter()
                .map(|(a, b)| (g.compose(a).expect("right-handed"), *b))
                .collect(),
        }
    }

    /// One pair per line: controller `qx qy qz qw tx ty tz`, then the end
    /// effector in the same layout. `#` starts a comment.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# controller qx qy qz qw tx ty tz | end-effector qx qy qz qw tx ty tz\n");
        for (a, b) in &self.pairs {
            let nums: Vec<String> = [a, b]
                .iter()
                .flat_map(|p| p.quaternion_xyzw().into_iter().chain(p.translation_array()))
                .map(|v| format!("{v:e}"))
                .collect();
            let _ = writeln!(s, "{}", nums.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, HandEyeError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| HandEyeError::Parse { line: i + 1, message };
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| err(format!("`{t}`: {e}"))))
                .collect::<Result<_, _>>()?;
            if v.len() != 14 {
                return Err(err(format!("expected 14 numbers, found {}", v.len())));
            }
            let pose = |o: usize| {
                RigidTransform::from_xyzw(
                    [v[o], v[o + 1], v[o + 2], v[o + 3]],
                    [v[o + 4], v[o + 5], v[o + 6]],
                    Handedness::Right,
                )
                .map_err(|e| err(e.to_string()))
            };
            pairs.push((pose(0)?, pose(7)?));
        }
        Self::new(pairs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandEyeResult {
    /// `^Q T_EE`.
    pub x: RigidTransform,
    /// `^W T_B`.
    pub y: RigidTransform,
    /// RMS geodesic rotation residual over the pairs, degrees.
    pub residual_rot: f64,
    /// RMS translation residual over the pairs, meters.
    pub residual_trans: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandEyeConfig {
    /// Residual weights: one radian of rotation error costs as much as
    /// `rotation_weight / translation_weight` meters.
    pub rotation_weight: f64,
    pub translation_weight: f64,
}

impl Default for HandEyeConfig {
    fn default() -> Self {
        Self {
            rotation_weight: 1.0,
            translation_weight: 1.0,
        }
    }
}

/// Rotations of the controller's relative motions must reach 5° about at
/// least two non-parallel axes.
pub fn check_excitation(cal: &CalibrationSet) -> Result<(), HandEyeError> {
    let mut axes: Vec<Vector3<f64>> = Vec::new();
    let p = cal.pairs();
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            let rel = p[i].0.rotation().inverse() * p[j].0.rotation();
            if rel.angle() >= MIN_EXCITATION {
                if let Some(axis) = rel.axis() {
                    axes.push(axis.into_inner());
                }
            }
        }
    }
    let independent = axes
        .iter()
        .enumerate()
        .any(|(i, a)| axes[i + 1..].iter().any(|b| a.cross(b).norm() >= MIN_EXCITATION.sin()));
    if independent {
        Ok(())
    } else {
        Err(HandEyeError::InsufficientExcitation)
    }
}

pub fn solve_ax_yb(cal: &CalibrationSet) -> Result<HandEyeResult, HandEyeError> {
    solve_ax_yb_with(cal, &HandEyeConfig::default())
}

pub fn solve_ax_yb_with(cal: &CalibrationSet, config: &HandEyeConfig) -> Result<HandEyeResult, HandEyeError> {
    check_excitation(cal)?;
    let (x0, y0) = initial_estimate(cal);
    let (x, y) = refine(cal, x0, y0, config)?;
    let (residual_rot, residual_trans) = pair_residuals(cal, &x, &y);
    Ok(HandEyeResult {
        x,
        y,
        residual_rot: residual_rot.to_degrees(),
        residual_trans,
    })
}

/// RMS rotation (radians) and translation (meters) residuals of `A·X = Y·B`.
pub fn pair_residuals(cal: &CalibrationSet, x: &RigidTransform, y: &RigidTransform) -> (f64, f64) {
    let n = cal.len() as f64;
    let (mut sr, mut st) = (0.0, 0.0);
    for (a, b) in cal.pairs() {
        let (r, t) = residual(a, b, x.rotation(), x.translation(), y.rotation(), y.translation());
        sr += r.norm_squared();
        st += t.norm_squared();
    }
    ((sr / n).sqrt(), (st / n).sqrt())
}

/// Weighted sum of squared residuals, the quantity the solver minimizes.
pub fn objective(cal: &CalibrationSet, x: &RigidTransform, y: &RigidTransform, config: &HandEyeConfig) -> f64 {
    cal.pairs()
        .iter()
        .map(|(a, b)| {
            let (r, t) = residual(a, b, x.rotation(), x.translation(), y.rotation(), y.translation());
            config.rotation_weight.powi(2) * r.norm_squared() + config.translation_weight.powi(2) * t.norm_squared()
        })
        .sum()
}

type Quat = UnitQuaternion<f64>;

fn residual(
    a: &RigidTransform,
    b: &RigidTransform,
    rx: &Quat,
    tx: &Vector3<f64>,
    ry: &Quat,
    ty: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let rot = (b.rotation().inverse() * ry.inverse() * a.rotation() * rx).scaled_axis();
    let trans = a.rotation() * tx + a.translation() - ry * b.translation() - ty;
    (rot, trans)
}

/// Closed-form start: the rotation constraint `R_A R_X = R_Y R_B` is linear
/// in the entries of both rotations, so they come from the null vector of a
/// stacked Kronecker system; translations then follow linearly.
fn initial_estimate(cal: &CalibrationSet) -> (RigidTransform, RigidTransform) {
    let mut mtm = SMatrix::<f64, 18, 18>::zeros();
    let id = Matrix3::<f64>::identity();
    for (a, b) in cal.pairs() {
        let ra = a.rotation_matrix();
        let rb = b.rotation_matrix();
        // vec(R_A R_X) = (I ⊗ R_A) vec(R_X); vec(R_Y R_B) = (R_Bᵀ ⊗ I) vec(R_Y)
        let mut m = SMatrix::<f64, 9, 18>::zeros();
        m.fixed_view_mut::<9, 9>(0, 0).copy_from(&id.kronecker(&ra));
        m.fixed_view_mut::<9, 9>(0, 9).copy_from(&(-rb.transpose().kronecker(&id)));
        mtm += m.transpose() * m;
    }
    let eig = mtm.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let v: SVector<f64, 18> = eig.eigenvectors.column(k).into_owned();
    let mut rx = Matrix3::from_column_slice(&v.as_slice()[..9]);
    let mut ry = Matrix3::from_column_slice(&v.as_slice()[9..]);
    if rx.determinant() + ry.determinant() < 0.0 {
        rx = -rx;
        ry = -ry;
    }
    let rx = nearest_rotation(&rx);
    let ry = nearest_rotation(&ry);

    // R_A t_X - t_Y = R_Y t_B - t_A
    let n = cal.len();
    let mut lhs = DMatrix::<f64>::zeros(3 * n, 6);
    let mut rhs = DVector::<f64>::zeros(3 * n);
    for (k, (a, b)) in cal.pairs().iter().enumerate() {
        lhs.view_mut((3 * k, 0), (3, 3)).copy_from(&a.rotation_matrix());
        lhs.view_mut((3 * k, 3), (3, 3)).copy_from(&(-id));
        rhs.rows_mut(3 * k, 3).copy_from(&(ry * b.translation() - a.translation()));
    }
    let t = lhs
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(6));
    (
        RigidTransform::from_rotation_matrix(&rx, Vector3::new(t[0], t[1], t[2]), Handedness::Right),
        RigidTransform::from_rotation_matrix(&ry, Vector3::new(t[3], t[4], t[5]), Handedness::Right),
    )
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let d = (u * vt).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt
}

/// Damped Gauss–Newton over the 12-parameter chart
/// `(R_X·exp(δ₀), t_X + δ₁, R_Y·exp(δ₂), t_Y + δ₃)`.
fn refine(
    cal: &CalibrationSet,
    x: RigidTransform,
    y: RigidTransform,
    config: &HandEyeConfig,
) -> Result<(RigidTransform, RigidTransform), HandEyeError> {
    type V12 = SVector<f64, 12>;
    let (wr, wt) = (config.rotation_weight, config.translation_weight);
    let n = cal.len();
    let apply = |s: &State, d: &V12| State {
        rx: s.rx * Quat::from_scaled_axis(Vector3::new(d[0], d[1], d[2])),
        tx: s.tx + Vector3::new(d[3], d[4], d[5]),
        ry: s.ry * Quat::from_scaled_axis(Vector3::new(d[6], d[7], d[8])),
        ty: s.ty + Vector3::new(d[9], d[10], d[11]),
    };
    let residuals = |s: &State| {
        let mut r = DVector::<f64>::zeros(6 * n);
        for (k, (a, b)) in cal.pairs().iter().enumerate() {
            let (rot, trans) = residual(a, b, &s.rx, &s.tx, &s.ry, &s.ty);
            r.rows_mut(6 * k, 3).copy_from(&(rot * wr));
            r.rows_mut(6 * k + 3, 3).copy_from(&(trans * wt));
        }
        r
    };
    let mut state = State {
        rx: *x.rotation(),
        tx: *x.translation(),
        ry: *y.rotation(),
        ty: *y.translation(),
    };
    let mut r = residuals(&state);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-6;
    const H: f64 = 1e-6;
    for _ in 0..MAX_ITERATIONS {
        let mut jac = DMatrix::<f64>::zeros(6 * n, 12);
        for p in 0..12 {
            let mut d = V12::zeros();
            d[p] = H;
            let plus = residuals(&apply(&state, &d));
            let minus = residuals(&apply(&state, &(-d)));
            jac.set_column(p, &((plus - minus) / (2.0 * H)));
        }
        let jtj: SMatrix<f64, 12, 12> = (jac.transpose() * &jac).fixed_view::<12, 12>(0, 0).into_owned();
        let jtr: V12 = (jac.transpose() * &r).fixed_rows::<12>(0).into_owned();
        loop {
            let mut damped = jtj;
            for i in 0..12 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    return Err(HandEyeError::NonConvergence);
                }
                continue;
            };
            let step = -chol.solve(&jtr);
            let trial = apply(&state, &step);
            let tr = residuals(&trial);
            let tc = tr.norm_squared();
            if tc <= cost {
                let small = step.norm() < 1e-12 || cost - tc <= 1e-16 * cost;
                state = trial;
                r = tr;
                cost = tc;
                lambda = (lambda * 0.1).max(1e-12);
                if small {
                    return Ok(state.into_pair());
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                // No descent direction left at working precision.
                return Ok(state.into_pair());
            }
        }
    }
    Err(HandEyeError::NonConvergence)
}

#[derive(Clone, Copy)]
struct State {
    rx: Quat,
    tx: Vector3<f64>,
    ry: Quat,
    ty: Vector3<f64>,
}

impl State {
    fn into_pair(self) -> (RigidTransform, RigidTransform) {
        (
            RigidTransform::new(self.rx, self.tx, Handedness::Right),
            RigidTransform::new(self.ry, self.ty, Handedness::Right),
        )
    }
}

/// `^W T_EE = ^W T_Q · ^Q T_EE`.
pub fn controller_to_ee(wtq: &RigidTransform, x: &RigidTransform) -> Result<RigidTransform, HandEyeError> {
    if wtq.handedness() != Handedness::Right || x.handedness() != Handedness::Right {
        return Err(HandEyeError::HandednessMismatch);
    }
    wtq.compose(x).map_err(|_| HandEyeError::HandednessMismatch)
}

/// Per-step end-effector motion `^EE_{i+1} T_EE_i`.
pub fn relative_ee_trajectory(traj: &[RigidTransform], x: &RigidTransform) -> Result<Vec<RigidTransform>, HandEyeError> {
    if traj.len() < 2 {
        return Err(HandEyeError::TooShort(traj.len()));
    }
    let ee: Vec<RigidTransform> = traj
        .iter()
        .map(|q| controller_to_ee(q, x))
        .collect::<Result<_, _>>()?;
    Ok(ee
        .windows(2)
        .map(|w| w[1].inverse().compose(&w[0]).expect("right-handed"))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    pub width: f64,
    pub clamped: bool,
}

/// Opening between the two finger markers, less the marker mounting offset.
pub fn gripper_width(left: &RigidTransform, right: &RigidTransform, zero_offset: f64) -> GripperState {
    let raw = (left.translation() - right.translation()).norm() - zero_offset;
    let width = raw.clamp(0.0, MAX_GRIPPER_WIDTH);
    GripperState {
        width,
        clamped: width != raw,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const R: Handedness = Handedness::Right;

    fn random_pose(rng: &mut impl Rng) -> RigidTransform {
        let w = Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
        let t = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        RigidTransform::new(Quat::from_scaled_axis(w), t, R)
    }

    fn synthetic(rng: &mut impl Rng, x: &RigidTransform, y: &RigidTransform, n: usize) -> CalibrationSet {
        let pairs = (0..n)
            .map(|_| {
                let b = random_pose(rng);
                let a = y.compose(&b).unwrap().compose(&x.inverse()).unwrap();
                (a, b)
            })
            .collect();
        CalibrationSet::new(pairs).unwrap()
    }

    #[test]
    fn identity_when_a_equals_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = (0..6)
            .map(|_| {
                let p = random_pose(&mut rng);
                (p, p)
            })
            .collect();
        let res = solve_ax_yb(&CalibrationSet::new(pairs).unwrap()).unwrap();
        assert!(res.x.distance(&RigidTransform::identity(R)) < 1e-12);
        assert!(res.y.distance(&RigidTransform::identity(R)) < 1e-12);
    }

    #[test]
    fn noiseless_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = random_pose(&mut rng);
            let y = random_pose(&mut rng);
            let cal = synthetic(&mut rng, &x, &y, 10);
            let res = solve_ax_yb(&cal).unwrap();
            assert!(res.x.distance(&x) <= 1e-6, "{:e}", res.x.distance(&x));
            assert!(res.y.distance(&y) <= 1e-6);
            assert!(res.residual_rot < 1e-6 && res.residual_trans < 1e-9);
        }
    }

    #[test]
    fn single_axis_motion_is_rejected() {
        let pairs = (0..5)
            .map(|i| {
                let p = RigidTransform::from_axis_angle(Vector3::z(), 0.3 * f64::from(i), Vector3::x() * f64::from(i), R);
                (p, p)
            })
            .collect();
        let cal = CalibrationSet::new(pairs).unwrap();
        assert_eq!(solve_ax_yb(&cal), Err(HandEyeError::InsufficientExcitation));
    }

    #[test]
    fn too_few_or_left_handed_pairs() {
        let i = RigidTransform::identity(R);
        assert_eq!(CalibrationSet::new(vec![(i, i); 2]), Err(HandEyeError::TooFewPairs(2)));
        let l = RigidTransform::identity(Handedness::Left);
        assert_eq!(CalibrationSet::new(vec![(i, l); 3]), Err(HandEyeError::HandednessMismatch));
    }

    #[test]
    fn solution_beats_ground_truth_and_is_world_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_pose(&mut rng);
        let y = random_pose(&mut rng);
        let clean = synthetic(&mut rng, &x, &y, 10);
        let noisy = CalibrationSet::new(
            clean
                .pairs()
                .iter()
                .map(|(a, b)| {
                    let w = Vector3::from_fn(|_, _| rng.random_range(-0.003..0.003));
                    let t = Vector3::from_fn(|_, _| rng.random_range(-0.002..0.002));
                    (RigidTransform::new(Quat::from_scaled_axis(w), t, R).compose(a).unwrap(), *b)
                })
                .collect(),
        )
        .unwrap();
        let cfg = HandEyeConfig::default();
        let res = solve_ax_yb(&noisy).unwrap();
        assert!(objective(&noisy, &res.x, &res.y, &cfg) <= objective(&noisy, &x, &y, &cfg) + 1e-9);

        let g = random_pose(&mut rng);
        let moved = solve_ax_yb(&noisy.with_world(&g)).unwrap();
        assert!(moved.x.distance(&res.x) <= 1e-9, "{:e}", moved.x.distance(&res.x));
        assert!(moved.y.distance(&g.compose(&res.y).unwrap()) <= 1e-9);
    }

    #[test]
    fn pair_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, y) = (random_pose(&mut rng), random_pose(&mut rng));
        let cal = synthetic(&mut rng, &x, &y, 4);
        let back = CalibrationSet::from_text(&cal.to_text()).unwrap();
        for (p, q) in cal.pairs().iter().zip(back.pairs()) {
            assert!(p.0.distance(&q.0) < 1e-15 && p.1.distance(&q.1) < 1e-15);
        }
        assert!(matches!(CalibrationSet::from_text("1 2 3"), Err(HandEyeError::Parse { line: 1, .. })));
    }

    #[test]
    fn controller_to_ee_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (q, x) = (random_pose(&mut rng), random_pose(&mut rng));
        let i = RigidTransform::identity(R);
        assert!(controller_to_ee(&q, &i).unwrap().distance(&q) < 1e-15);
        assert!(controller_to_ee(&i, &x).unwrap().distance(&x) < 1e-15);
        let round = controller_to_ee(&controller_to_ee(&q, &x).unwrap(), &x.inverse()).unwrap();
        assert!(round.distance(&q) < 1e-12);
        let l = RigidTransform::identity(Handedness::Left);
        assert_eq!(controller_to_ee(&l, &x), Err(HandEyeError::HandednessMismatch));
    }

    #[test]
    fn trajectory_examples() {
        let i = RigidTransform::identity(R);
        let q = RigidTransform::from_translation(Vector3::new(0.1, 0.0, 0.0), R);
        assert_eq!(relative_ee_trajectory(&[i], &i), Err(HandEyeError::TooShort(1)));
        let d = relative_ee_trajectory(&[q, q, q], &i).unwrap();
        assert!(d.iter().all(|d| d.distance(&i) < 1e-15));
        let d = relative_ee_trajectory(&[i, q], &i).unwrap();
        assert!((d[0].translation().norm() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn gripper_examples() {
        let at = |x: f64| RigidTransform::from_translation(Vector3::new(x, 0.0, 0.3), R);
        assert_eq!(gripper_width(&at(0.0), &at(0.0), 0.0), GripperState { width: 0.0, clamped: false });
        assert_eq!(gripper_width(&at(0.0), &at(0.08), 0.0), GripperState { width: 0.08, clamped: false });
        assert_eq!(gripper_width(&at(0.0), &at(0.12), 0.0), GripperState { width: 0.08, clamped: true });
        assert!(gripper_width(&at(0.0), &at(0.01), 0.02).clamped);
    }

    fn arb_pose() -> impl Strategy<Value = RigidTransform> {
        (prop::array::uniform3(-3.0f64..3.0), prop::array::uniform3(-1.0f64..1.0))
            .prop_map(|(w, t)| RigidTransform::new(Quat::from_scaled_axis(Vector3::from(w)), Vector3::from(t), R))
    }

    proptest! {
        #[test]
        fn delta_chain_reproduces_endpoints(
            traj in prop::collection::vec(arb_pose(), 2..40),
            x in arb_pose(),
        ) {
            let deltas = relative_ee_trajectory(&traj, &x).unwrap();
            let chain = deltas.iter().fold(RigidTransform::identity(R), |acc, d| d.compose(&acc).unwrap());
            let first = traj[0].compose(&x).unwrap();
            let last = traj[traj.len() - 1].compose(&x).unwrap();
            let expect = last.inverse().compose(&first).unwrap();
            prop_assert!(chain.distance(&expect) <= 1e-9);
        }

        #[test]
        fn deltas_ignore_world_frame(
            traj in prop::collection::vec(arb_pose(), 2..20),
            x in arb_pose(),
            g in arb_pose(),
        ) {
            let moved: Vec<RigidTransform> = traj.iter().map(|q| g.compose(q).unwrap()).collect();
            let a = relative_ee_trajectory(&traj, &x).unwrap();
            let b = relative_ee_trajectory(&moved, &x).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!(p.distance(q) <= 1e-12);
            }
        }

        #[test]
        fn gripper_width_is_symmetric(a in arb_pose(), b in arb_pose(), off in 0.0f64..0.05) {
            prop_assert_eq!(gripper_width(&a, &b, off), gripper_width(&b, &a, off));
        }
    }
}
