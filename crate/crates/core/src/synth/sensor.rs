//! A synthetic two-faced tactile finger and its internal camera.
//!
//! The two faces are planes through the CAD z axis, tilted ±α. A point on a
//! face is `ℓ·lateral + λ·length` with `ℓ` the distance from the apex and `λ`
//! the distance along the finger. Each face carries a rigid contact-layer
//! trapezoid near the base and a flexible inner edge further out, which bends
//! inwards within its face plane.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{project, CameraIntrinsics, Handedness, Pixel, Plane, Point3, RigidTransform};
use crate::imaging::{Canvas, GrayImage};
use crate::tactile::{Face, SensorGeometry};

use super::SynthError;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorDesign {
    /// Tilt of each face from the x axis, radians.
    pub alpha: f64,
    /// `λ` of the trapezoid's top and bottom edges.
    pub top_lambda: f64,
    pub bottom_lambda: f64,
    /// `ℓ` range of the top and bottom edges.
    pub top_span: (f64, f64),
    pub bottom_span: (f64, f64),
    /// `ℓ` of the undeformed inner edge and its `λ` range.
    pub edge_offset: f64,
    pub edge_range: (f64, f64),
    /// Samples per edge polyline.
    pub edge_samples: usize,
}

impl Default for SensorDesign {
    fn default() -> Self {
        Self {
            alpha: 35f64.to_radians(),
            top_lambda: 0.002,
            bottom_lambda: 0.012,
            top_span: (0.006, 0.020),
            bottom_span: (0.008, 0.018),
            edge_offset: 0.016,
            edge_range: (0.016, 0.050),
            edge_samples: 200,
        }
    }
}

impl SensorDesign {
    fn sign(face: Face) -> f64 {
        match face {
            Face::Left => -1.0,
            Face::Right => 1.0,
        }
    }

    pub fn lateral(&self, face: Face) -> Vector3<f64> {
        Vector3::new(Self::sign(face) * self.alpha.cos(), -self.alpha.sin(), 0.0)
    }

    pub fn length(&self) -> Vector3<f64> {
        Vector3::z()
    }

    pub fn point(&self, face: Face, ell: f64, lambda: f64) -> Point3 {
        Point3::from(self.lateral(face) * ell + self.length() * lambda)
    }

    pub fn plane(&self, face: Face) -> Plane {
        Plane::new(self.lateral(face).cross(&self.length()), 0.0).expect("unit normal")
    }

    /// Contact-layer outline: top edge (inner to outer), then bottom edge
    /// (outer to inner).
    pub fn trapezoid(&self, face: Face) -> [Point3; 4] {
        [
            self.point(face, self.top_span.0, self.top_lambda),
            self.point(face, self.top_span.1, self.top_lambda),
            self.point(face, self.bottom_span.1, self.bottom_lambda),
            self.point(face, self.bottom_span.0, self.bottom_lambda),
        ]
    }

    pub fn rest_edge(&self, face: Face) -> Vec<Point3> {
        deformed_edge(self, face, 0.0, &[0.0, 0.0, 1.0])
    }

    pub fn geometry(&self) -> SensorGeometry {
        let (l, r) = (self.trapezoid(Face::Left), self.trapezoid(Face::Right));
        SensorGeometry::new(
            [l[1], l[0], r[0], r[1]],
            true,
            [self.plane(Face::Left), self.plane(Face::Right)],
            [self.rest_edge(Face::Left), self.rest_edge(Face::Right)],
        )
        .expect("design geometry is consistent")
    }
}

/// In-plane bend of each face's inner edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationParams {
    /// Tip deflection towards the apex, meters, `[left, right]`.
    pub amplitude: [f64; 2],
    /// Polynomial `Σ cᵢ sⁱ` over the normalized edge coordinate `s ∈ [0, 1]`;
    /// should satisfy `p(0) = 0` and `max |p| = p(1) = 1`.
    pub profile: Vec<f64>,
}

impl DeformationParams {
    pub fn quadratic(left: f64, right: f64) -> Self {
        Self {
            amplitude: [left, right],
            profile: vec![0.0, 0.0, 1.0],
        }
    }

    pub fn rest() -> Self {
        Self::quadratic(0.0, 0.0)
    }
}

fn poly(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

fn deformed_edge(design: &SensorDesign, face: Face, amplitude: f64, profile: &[f64]) -> Vec<Point3> {
    let n = design.edge_samples.max(2);
    let (l0, l1) = design.edge_range;
    (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            let ell = design.edge_offset - amplitude * poly(profile, s);
            design.point(face, ell, l0 + (l1 - l0) * s)
        })
        .collect()
}

/// Deformed inner edges, `[left, right]`, in the CAD frame. Bending happens
/// inside each face plane, so the curves stay planar by construction.
pub fn gen_deformation(design: &SensorDesign, params: &DeformationParams) -> [Vec<Point3>; 2] {
    Face::BOTH.map(|f| deformed_edge(design, f, params.amplitude[f.index()], &params.profile))
}

/// Camera-from-world transform of a camera at `eye` looking at `target`,
/// image x along `right_hint` (projected), image y down.
pub fn look_at(eye: Point3, target: Point3, right_hint: Vector3<f64>) -> RigidTransform {
    let z = (target - eye).normalize();
    let x = (right_hint - z * z.dot(&right_hint)).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    RigidTransform::new(rot, -(r * eye.coords), Handedness::Right)
}

/// The internal camera: intrinsics plus camera-from-CAD pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorCamera {
    pub k: CameraIntrinsics,
    pub extrinsics: RigidTransform,
}

impl SensorCamera {
    pub fn nominal() -> Self {
        Self {
            k: CameraIntrinsics::new(330.0, 330.0, 320.0, 240.0, 640, 480).expect("valid"),
            extrinsics: look_at(
                Point3::new(0.0, 0.030, -0.012),
                Point3::new(0.0, 0.0, 0.022),
                Vector3::x(),
            ),
        }
    }

    /// A unit-to-unit variation of the nominal camera: focal lengths within
    /// ±`focal` (relative), principal point within ±`center` px, mounting
    /// within ±`shift` m and ±`tilt` rad.
    pub fn perturbed(seed: u64, focal: f64, center: f64, shift: f64, tilt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |a: f64| rng.random_range(-a..=a);
        let n = Self::nominal();
        let k = CameraIntrinsics::new(
            n.k.fx * (1.0 + u(focal)),
            n.k.fy * (1.0 + u(focal)),
            n.k.cx + u(center),
            n.k.cy + u(center),
            n.k.width,
            n.k.height,
        )
        .expect("small perturbation stays valid");
        let w = Vector3::new(u(tilt), u(tilt), u(tilt));
        let dt = Vector3::new(u(shift), u(shift), u(shift));
        let delta = RigidTransform::new(UnitQuaternion::from_scaled_axis(w), dt, Handedness::Right);
        Self {
            k,
            extrinsics: delta.compose(&n.extrinsics).expect("right-handed"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub background: f64,
    pub foreground: f64,
    /// Edge stroke width, pixels.
    pub stroke_width: f64,
    /// Gaussian pixel noise, gray levels.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            background: 25.0,
            foreground: 230.0,
            stroke_width: 3.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// A rendered frame with its exact projected geometry.
#[derive(Debug, Clone)]
pub struct TactileRender {
    pub image: GrayImage,
    /// Projected inner edges, `[left, right]`.
    pub edge_pixels: [Vec<Pixel>; 2],
    /// Projected trapezoids in canonical order (top-left first, clockwise).
    pub trapezoids: [[Pixel; 4]; 2],
    /// The four PnP corners, left to right.
    pub corner_pixels: [Pixel; 4],
}

fn project_checked(p: &Point3, cam: &SensorCamera) -> Result<Pixel, SynthError> {
    let c = cam.extrinsics.transform_point(p);
    let px = project(&c, &cam.k).map_err(|_| SynthError::EdgeOutOfView(format!("{p:?} behind camera")))?;
    let margin = 2.0;
    if px.u < margin
        || px.v < margin
        || px.u > f64::from(cam.k.width) - 1.0 - margin
        || px.v > f64::from(cam.k.height) - 1.0 - margin
    {
        return Err(SynthError::EdgeOutOfView(format!("{p:?} projects to {px:?}")));
    }
    Ok(px)
}

/// Lit contact layers (filled) and inner edges (strokes) on a dark
/// background.
pub fn render_tactile_image(
    edges: &[Vec<Point3>; 2],
    design: &SensorDesign,
    cam: &SensorCamera,
    config: &RenderConfig,
) -> Result<TactileRender, SynthError> {
    let mut canvas = Canvas::new(cam.k.width, cam.k.height);
    let mut traps = [[Pixel::new(0.0, 0.0); 4]; 2];
    for face in Face::BOTH {
        let t = design.trapezoid(face);
        let px = t
            .iter()
            .map(|p| project_checked(p, cam))
            .collect::<Result<Vec<_>, _>>()?;
        canvas.fill_polygon(&px);
        // Outline order is inner-top, outer-top, outer-bottom, inner-bottom;
        // in the image the inner side of the left face is on the right.
        traps[face.index()] = match face {
            Face::Left => [px[1], px[0], px[3], px[2]],
            Face::Right => [px[0], px[1], px[2], px[3]],
        };
    }
    let mut edge_pixels: [Vec<Pixel>; 2] = [Vec::new(), Vec::new()];
    for face in Face::BOTH {
        let px = edges[face.index()]
            .iter()
            .map(|p| project_checked(p, cam))
            .collect::<Result<Vec<_>, _>>()?;
        canvas.stroke_polyline(&px, config.stroke_width);
        edge_pixels[face.index()] = px;
    }
    let mut image = canvas.to_image(config.background, config.foreground);
    if config.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.noise_sigma).expect("finite sigma");
        for p in image.pixels_mut() {
            let v = f64::from(p[0]) + normal.sample(&mut rng);
            p[0] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    let corner_pixels = [traps[0][0], traps[0][1], traps[1][0], traps[1][1]];
    Ok(TactileRender {
        image,
        edge_pixels,
        trapezoids: traps,
        corner_pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_reproduces_rest_edges() {
        let d = SensorDesign::default();
        let e = gen_deformation(&d, &DeformationParams::rest());
        let g = d.geometry();
        assert_eq!(e[0], g.rest_edges[0]);
        assert_eq!(e[1], g.rest_edges[1]);
    }

    #[test]
    fn max_displacement_equals_amplitude() {
        let d = SensorDesign::default();
        let a = 0.0073;
        let bent = gen_deformation(&d, &DeformationParams::quadratic(a, a / 2.0));
        let rest = d.geometry().rest_edges;
        for (face, amp) in [(0, a), (1, a / 2.0)] {
            let max = bent[face]
                .iter()
                .zip(&rest[face])
                .map(|(p, q)| (p - q).norm())
                .fold(0.0, f64::max);
            assert!((max - amp).abs() < 1e-12, "{max} vs {amp}");
        }
    }

    #[test]
    fn deformed_edges_stay_planar() {
        let d = SensorDesign::default();
        let bent = gen_deformation(&d, &DeformationParams::quadratic(0.01, 0.004));
        for face in Face::BOTH {
            let plane = d.plane(face);
            for p in &bent[face.index()] {
                assert!(plane.signed_distance(p).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn nominal_render_is_in_view() {
        let d = SensorDesign::default();
        let edges = gen_deformation(&d, &DeformationParams::quadratic(0.01, 0.01));
        let r = render_tactile_image(&edges, &d, &SensorCamera::nominal(), &RenderConfig::default()).unwrap();
        assert_eq!(r.image.dimensions(), (640, 480));
        assert!(r.corner_pixels.windows(2).all(|w| w[0].u < w[1].u));
    }

    #[test]
    fn camera_looking_away_is_out_of_view() {
        let d = SensorDesign::default();
        let mut cam = SensorCamera::nominal();
        cam.extrinsics = look_at(
            Point3::new(0.0, 0.03, -0.012),
            Point3::new(0.0, 0.06, -0.05),
            Vector3::x(),
        );
        let edges = gen_deformation(&d, &DeformationParams::rest());
        assert!(matches!(
            render_tactile_image(&edges, &d, &cam, &RenderConfig::default()),
            Err(SynthError::EdgeOutOfView(_))
        ));
    }

    #[test]
    fn shifted_camera_moves_corners_by_projection() {
        let d = SensorDesign::default();
        let edges = gen_deformation(&d, &DeformationParams::rest());
        let nominal = SensorCamera::nominal();
        let shift = RigidTransform::from_translation(Vector3::new(0.005, 0.0, 0.0), Handedness::Right);
        let moved = SensorCamera {
            k: nominal.k,
            extrinsics: shift.compose(&nominal.extrinsics).unwrap(),
        };
        let a = render_tactile_image(&edges, &d, &nominal, &RenderConfig::default()).unwrap();
        let b = render_tactile_image(&edges, &d, &moved, &RenderConfig::default()).unwrap();
        let g = d.geometry();
        for i in 0..4 {
            let c = nominal.extrinsics.transform_point(&g.cad_corners[i]);
            let expected = nominal.k.fx * 0.005 / c.z;
            let du = b.corner_pixels[i].u - a.corner_pixels[i].u;
            assert!((du - expected).abs() < 1e-9, "{du} vs {expected}");
        }
    }
}
