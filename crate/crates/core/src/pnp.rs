//! Perspective-n-point pose estimation.
//!
//! The planar solver fits a homography, decomposes it with the infinitesimal
//! plane-based method (which yields the two poses a plane is ambiguous
//! between), and polishes both with Levenberg–Marquardt on pixel reprojection
//! error. Non-coplanar point sets are seeded from their best-fit plane.

use nalgebra::{DMatrix, Matrix2, Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{exp_so3, CameraIntrinsics, Handedness, Pixel, Point3, RigidTransform};

/// Iteration cap of the reprojection refinement.
pub const MAX_ITERATIONS: usize = 50;
/// Refinement stops once the parameter step is shorter than this.
pub const STEP_TOLERANCE: f64 = 1e-10;
/// Two planar solutions whose errors are within this ratio are ambiguous.
pub const AMBIGUITY_RATIO: f64 = 1.2;
/// Solutions closer than this (radians) are the same pose, not an ambiguity.
const DISTINCT_ANGLE: f64 = 0.5 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    /// Camera-from-object transform.
    pub pose: RigidTransform,
    /// Reprojection RMS in pixels.
    pub rms: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("point and pixel counts differ ({0} vs {1})")]
    CountMismatch(usize, usize),
    #[error("correspondences are degenerate (collinear or coincident)")]
    DegenerateCorners,
    #[error("no solution places the points in front of the camera")]
    NoSolution,
    #[error(
        "planar pose is ambiguous: {:.3} px vs {:.3} px",
        best.rms,
        alternative.rms
    )]
    Ambiguous {
        best: Box<PnpSolution>,
        alternative: Box<PnpSolution>,
    },
}

impl PnpError {
    /// The lower-error pose of an ambiguous result.
    pub fn best(&self) -> Option<PnpSolution> {
        match self {
            PnpError::Ambiguous { best, .. } => Some(**best),
            _ => None,
        }
    }
}

fn check_inputs(object: &[Point3], image: &[Pixel]) -> Result<(), PnpError> {
    if object.len() != image.len() {
        return Err(PnpError::CountMismatch(object.len(), image.len()));
    }
    if object.len() < 4 {
        return Err(PnpError::TooFewPoints(object.len()));
    }
    if spread_ratio_2d(image) < 1e-9 {
        return Err(PnpError::DegenerateCorners);
    }
    Ok(())
}

/// Ratio of the smaller to the larger principal variance; 0 for collinear.
fn spread_ratio_2d(points: &[Pixel]) -> f64 {
    let n = points.len() as f64;
    let (mu, mv) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.u / n, b + p.v / n));
    let mut c = Matrix2::zeros();
    for p in points {
        let d = Vector2::new(p.u - mu, p.v - mv);
        c += d * d.transpose();
    }
    let e = c.symmetric_eigenvalues();
    let (lo, hi) = (e.min(), e.max());
    if hi <= 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Orthonormal frame of the best-fit plane: columns (e1, e2, n), origin at the
/// centroid, plus the singular values of the centered cloud.
fn plane_frame(object: &[Point3]) -> (Matrix3<f64>, Vector3<f64>, Vector3<f64>) {
    let n = object.len() as f64;
    let c = object.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in object {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let e1 = eig.eigenvectors.column(idx[0]).into_owned();
    let e2 = eig.eigenvectors.column(idx[1]).into_owned();
    let nrm = e1.cross(&e2);
    let sv = Vector3::new(
        eig.eigenvalues[idx[0]].max(0.0).sqrt(),
        eig.eigenvalues[idx[1]].max(0.0).sqrt(),
        eig.eigenvalues[idx[2]].max(0.0).sqrt(),
    );
    (Matrix3::from_columns(&[e1, e2, nrm]), c, sv)
}

/// True when the points lie on a plane up to a relative tolerance.
pub fn is_coplanar(object: &[Point3], tolerance: f64) -> bool {
    let (_, _, sv) = plane_frame(object);
    sv.z <= tolerance * sv.x.max(f64::MIN_POSITIVE)
}

/// Homography `H` with `x ~ H·(X, Y, 1)`, fitted by normalized DLT.
pub fn fit_homography(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    if src.len() < 4 || src.len() != dst.len() {
        return None;
    }
    let ts = normalizer(src)?;
    let td = normalizer(dst)?;
    let mut ata = DMatrix::<f64>::zeros(9, 9);
    for (s, d) in src.iter().zip(dst) {
        let s = ts * Vector3::new(s.x, s.y, 1.0);
        let d = td * Vector3::new(d.x, d.y, 1.0);
        let (x, y) = (s.x / s.z, s.y / s.z);
        let (u, v) = (d.x / d.z, d.y / d.z);
        let rows = [
            [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u],
            [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v],
        ];
        for r in rows {
            let r = nalgebra::RowDVector::from_row_slice(&r);
            ata += r.transpose() * &r;
        }
    }
    let eig = SymmetricEigen::new(ata);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = eig.eigenvectors.column(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let h = td.try_inverse()? * hn * ts;
    let scale = h[(2, 2)];
    if scale.abs() < 1e-15 {
        return None;
    }
    Some(h / scale)
}

fn normalizer(pts: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if mean_dist < 1e-15 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

/// The two rotation candidates of a plane-to-image homography whose object
/// origin sits at the plane points' centroid (`h[(2,2)] = 1`).
fn ippe_rotations(h: &Matrix3<f64>) -> Option<[Matrix3<f64>; 2]> {
    let v = Vector2::new(h[(0, 2)], h[(1, 2)]);
    let j = Matrix2::new(
        h[(0, 0)] - h[(2, 0)] * h[(0, 2)],
        h[(0, 1)] - h[(2, 1)] * h[(0, 2)],
        h[(1, 0)] - h[(2, 0)] * h[(1, 2)],
        h[(1, 1)] - h[(2, 1)] * h[(1, 2)],
    );
    let rv = Rotation3::rotation_between(&Vector3::z(), &Vector3::new(v.x, v.y, 1.0))
        .unwrap_or_else(Rotation3::identity)
        .into_inner();
    let b = Matrix2::new(
        rv[(0, 0)] - v.x * rv[(2, 0)],
        rv[(0, 1)] - v.x * rv[(2, 1)],
        rv[(1, 0)] - v.y * rv[(2, 0)],
        rv[(1, 1)] - v.y * rv[(2, 1)],
    );
    let a = b.try_inverse()? * j;
    let ata = a.transpose() * a;
    let gamma = (0.5
        * (ata[(0, 0)]
            + ata[(1, 1)]
            + ((ata[(0, 0)] - ata[(1, 1)]).powi(2) + 4.0 * ata[(0, 1)].powi(2)).sqrt()))
    .sqrt();
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    if !(gamma > 1e-15) {
        return None;
    }
    let r22 = a / gamma;
    let hm = Matrix2::identity() - r22.transpose() * r22;
    let b0 = hm[(0, 0)].max(0.0).sqrt();
    let b1 = hm[(1, 1)].max(0.0).sqrt() * if hm[(0, 1)] < 0.0 { -1.0 } else { 1.0 };
    let c0 = Vector3::new(r22[(0, 0)], r22[(1, 0)], b0);
    let c1 = Vector3::new(r22[(0, 1)], r22[(1, 1)], b1);
    let d = c0.cross(&c1);
    let r1 = Matrix3::new(
        r22[(0, 0)], r22[(0, 1)], d.x,
        r22[(1, 0)], r22[(1, 1)], d.y,
        b0, b1, d.z,
    );
    let r2 = Matrix3::new(
        r22[(0, 0)], r22[(0, 1)], -d.x,
        r22[(1, 0)], r22[(1, 1)], -d.y,
        -b0, -b1, d.z,
    );
    Some([rv * r1, rv * r2])
}

/// Least-squares translation for a fixed rotation, on normalized image points.
fn translation_for(rot: &Matrix3<f64>, object: &[Point3], rays: &[Vector2<f64>]) -> Option<Vector3<f64>> {
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (p, x) in object.iter().zip(rays) {
        let q = rot * p.coords;
        let rows = [
            (Vector3::new(1.0, 0.0, -x.x), x.x * q.z - q.x),
            (Vector3::new(0.0, 1.0, -x.y), x.y * q.z - q.y),
        ];
        for (a, b) in rows {
            ata += a * a.transpose();
            atb += a * b;
        }
    }
    ata.try_inverse().map(|m| m * atb)
}

fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    Rotation3::from_matrix_eps(m, 1e-12, 100, Rotation3::identity()).into_inner()
}

fn make_pose(rot: &Matrix3<f64>, t: Vector3<f64>) -> RigidTransform {
    let r = Rotation3::from_matrix_unchecked(orthonormalize(rot));
    RigidTransform::new(UnitQuaternion::from_rotation_matrix(&r), t, Handedness::Right)
}

pub fn reprojection_rms(
    pose: &RigidTransform,
    object: &[Point3],
    image: &[Pixel],
    k: &CameraIntrinsics,
) -> f64 {
    let mut sum = 0.0;
    for (p, px) in object.iter().zip(image) {
        let c = pose.transform_point(p);
        if c.z <= 0.0 {
            return f64::INFINITY;
        }
        let u = k.fx * c.x / c.z + k.cx;
        let v = k.fy * c.y / c.z + k.cy;
        sum += (u - px.u).powi(2) + (v - px.v).powi(2);
    }
    (sum / object.len() as f64).sqrt()
}

/// Levenberg–Marquardt on pixel reprojection error over a rotation-vector
/// chart; at most [`MAX_ITERATIONS`] iterations.
pub fn refine_pose(
    initial: &RigidTransform,
    object: &[Point3],
    image: &[Pixel],
    k: &CameraIntrinsics,
) -> PnpSolution {
    let mut rot = initial.rotation_matrix();
    let mut t = *initial.translation();
    let cost = |rot: &Matrix3<f64>, t: &Vector3<f64>| -> f64 {
        let mut s = 0.0;
        for (p, px) in object.iter().zip(image) {
            let c = rot * p.coords + t;
            if c.z <= 0.0 {
                return f64::INFINITY;
            }
            s += (k.fx * c.x / c.z + k.cx - px.u).powi(2) + (k.fy * c.y / c.z + k.cy - px.v).powi(2);
        }
        s
    };
    let mut current = cost(&rot, &t);
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        let mut jtj = nalgebra::Matrix6::<f64>::zeros();
        let mut jtr = nalgebra::Vector6::<f64>::zeros();
        for (p, px) in object.iter().zip(image) {
            let rp = rot * p.coords;
            let c = rp + t;
            let iz = 1.0 / c.z;
            let r = [
                k.fx * c.x * iz + k.cx - px.u,
                k.fy * c.y * iz + k.cy - px.v,
            ];
            // d(u,v)/dc
            let du = Vector3::new(k.fx * iz, 0.0, -k.fx * c.x * iz * iz);
            let dv = Vector3::new(0.0, k.fy * iz, -k.fy * c.y * iz * iz);
            for (g, res) in [du, dv].iter().zip(r) {
                // dc/dω = -[rp]×, dc/dt = I
                let jw = rp.cross(g);
                let row = nalgebra::Vector6::new(jw.x, jw.y, jw.z, g.x, g.y, g.z);
                jtj += row * row.transpose();
                jtr += row * res;
            }
        }
        let mut step_norm = 0.0;
        let mut accepted = false;
        for _ in 0..10 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let w = Vector3::new(delta[0], delta[1], delta[2]);
            let nr = exp_so3(&w) * rot;
            let nt = t + Vector3::new(delta[3], delta[4], delta[5]);
            let c = cost(&nr, &nt);
            step_norm = delta.norm();
            if c <= current {
                rot = orthonormalize(&nr);
                t = nt;
                current = c;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || step_norm < STEP_TOLERANCE {
            break;
        }
    }
    let pose = make_pose(&rot, t);
    PnpSolution {
        rms: reprojection_rms(&pose, object, image, k),
        pose,
    }
}

/// Both refined planar candidates, best first.
fn planar_candidates(
    object: &[Point3],
    image: &[Pixel],
    k: &CameraIntrinsics,
) -> Result<Vec<PnpSolution>, PnpError> {
    let (frame, origin, sv) = plane_frame(object);
    if sv.y <= 1e-9 * sv.x.max(f64::MIN_POSITIVE) {
        return Err(PnpError::DegenerateCorners);
    }
    let plane_pts: Vec<Vector2<f64>> = object
        .iter()
        .map(|p| {
            let d = frame.transpose() * (p.coords - origin);
            Vector2::new(d.x, d.y)
        })
        .collect();
    let rays: Vec<Vector2<f64>> = image
        .iter()
        .map(|px| Vector2::new((px.u - k.cx) / k.fx, (px.v - k.cy) / k.fy))
        .collect();
    let h = fit_homography(&plane_pts, &rays).ok_or(PnpError::DegenerateCorners)?;
    let rots = ippe_rotations(&h).ok_or(PnpError::DegenerateCorners)?;
    let local: Vec<Point3> = plane_pts.iter().map(|p| Point3::new(p.x, p.y, 0.0)).collect();
    // object = origin + frame · local
    let plane_from_object = make_pose(&frame, origin).inverse();
    let mut out = Vec::new();
    for r in rots {
        let Some(t) = translation_for(&r, &local, &rays) else {
            continue;
        };
        let seed = make_pose(&r, t)
            .compose(&plane_from_object)
            .expect("both right-handed");
        let sol = refine_pose(&seed, object, image, k);
        if sol.rms.is_finite() {
            out.push(sol);
        }
    }
    if out.is_empty() {
        return Err(PnpError::NoSolution);
    }
    out.sort_by(|a, b| a.rms.total_cmp(&b.rms));
    Ok(out)
}

/// Pose of a planar target from ≥ 4 correspondences.
///
/// When the two mirror-ambiguous solutions differ by more than half a degree
/// and explain the data about equally well, both are returned in
/// [`PnpError::Ambiguous`].
pub fn solve_planar(
    object: &[Point3],
    image: &[Pixel],
    k: &CameraIntrinsics,
) -> Result<PnpSolution, PnpError> {
    check_inputs(object, image)?;
    let sols = planar_candidates(object, image, k)?;
    let best = sols[0];
    if let Some(alt) = sols.get(1) {
        let apart = best.pose.rotation().angle_to(alt.pose.rotation()) > DISTINCT_ANGLE;
        // Sub-millipixel residuals are numerical noise, not evidence.
        let floor = 1e-3;
        if apart && alt.rms.max(floor) <= AMBIGUITY_RATIO * best.rms.max(floor) {
            return Err(PnpError::Ambiguous {
                best: Box::new(best),
                alternative: Box::new(*alt),
            });
        }
    }
    Ok(best)
}

/// Pose from ≥ 4 correspondences in general position, seeded from the best
/// planar fit of the object points.
pub fn solve_general(
    object: &[Point3],
    image: &[Pixel],
    k: &CameraIntrinsics,
) -> Result<PnpSolution, PnpError> {
    check_inputs(object, image)?;
    let seeds = planar_candidates(object, image, k)?;
    seeds
        .iter()
        .map(|s| refine_pose(&s.pose, object, image, k))
        .filter(|s| s.rms.is_finite())
        .min_by(|a, b| a.rms.total_cmp(&b.rms))
        .ok_or(PnpError::NoSolution)
}
