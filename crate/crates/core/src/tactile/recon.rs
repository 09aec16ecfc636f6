//! Extrinsic calibration, plane-constrained lifting and the full per-frame
//! reconstruction.

use crate::geometry::{backproject_to_plane, transform_plane, CameraIntrinsics, Pixel, Point3, RigidTransform};
use crate::imaging::{otsu, threshold_above, GrayImage};
use crate::pnp::{self, PnpError, PnpSolution};

use super::{
    edges_from_parts, find_trapezoids, refine_edge, resample_points, split_components, top_corners,
    BinarizeMethod, EdgeObservation, SensorGeometry, Stage, TactileError, TactilePointCloud,
    CLOUD_SIZE,
};

/// Corner reprojection RMS above which extrinsics are rejected, pixels.
pub const MAX_CORNER_RMS: f64 = 3.0;

/// Camera-from-CAD transform from the four top corners.
pub fn calibrate_extrinsics(
    top_corners: &[Pixel; 4],
    geom: &SensorGeometry,
    k: &CameraIntrinsics,
) -> Result<PnpSolution, TactileError> {
    let solved = if geom.corners_coplanar {
        pnp::solve_planar(&geom.cad_corners, top_corners, k)
    } else {
        pnp::solve_general(&geom.cad_corners, top_corners, k)
    };
    let sol = match solved {
        Ok(s) => s,
        // The corners span a wide, strongly slanted V; a near tie here still
        // leaves the lower-error pose as the physical one.
        Err(PnpError::Ambiguous { best, .. }) => *best,
        Err(e) => return Err(e.into()),
    };
    if sol.rms > MAX_CORNER_RMS {
        return Err(TactileError::HighResidual(sol.rms));
    }
    Ok(sol)
}

/// Edge points in the CAD frame plus the number of pixels whose rays missed
/// the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeReconstruction {
    pub points: Vec<Point3>,
    pub dropped: usize,
}

/// Lifts every edge pixel onto its face plane (expressed in the camera frame)
/// and maps the result back into the CAD frame.
pub fn reconstruct_edge(
    obs: &EdgeObservation,
    geom: &SensorGeometry,
    extrinsics: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<EdgeReconstruction, TactileError> {
    let plane = geom.edge_planes[obs.side.index()];
    let cam_plane = transform_plane(&plane, extrinsics);
    let cad_from_cam = extrinsics.inverse();
    let mut points = Vec::with_capacity(obs.pixels.len());
    let mut dropped = 0;
    for px in &obs.pixels {
        match backproject_to_plane(*px, k, &cam_plane) {
            Ok(p) => points.push(cad_from_cam.transform_point(&p)),
            Err(_) => dropped += 1,
        }
    }
    if points.is_empty() {
        return Err(TactileError::EmptyEdge);
    }
    Ok(EdgeReconstruction { points, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconConfig {
    pub binarize: BinarizeMethod,
    /// Half-width of the intensity centroid window across an edge stroke.
    pub centroid_radius: i64,
    /// Chain samples dropped at each end of an edge.
    pub end_trim: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            binarize: BinarizeMethod::Otsu,
            centroid_radius: 4,
            end_trim: 0,
        }
    }
}

/// Everything one tactile frame yields.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameReconstruction {
    pub cloud: TactilePointCloud,
    pub extrinsics: RigidTransform,
    /// Corner reprojection RMS of the extrinsics, pixels.
    pub corner_rms: f64,
    /// Dense edge points before resampling, `[left, right]`.
    pub edges: [Vec<Point3>; 2],
    pub dropped: usize,
    /// Fewer edge points than the cloud size; the cloud repeats points.
    pub repeated: bool,
}

/// Image → 256-point cloud in the CAD frame.
pub fn reconstruct_frame(
    img: &GrayImage,
    geom: &SensorGeometry,
    k: &CameraIntrinsics,
    config: &ReconConfig,
    source_sensor: &str,
    timestamp: f64,
) -> Result<FrameReconstruction, TactileError> {
    let levels = otsu(img);
    let threshold = match config.binarize {
        BinarizeMethod::Otsu => levels.threshold,
        BinarizeMethod::Fixed(t) => t,
    };
    let mask = threshold_above(img, threshold);
    if mask.is_empty() {
        return Err(TactileError::NoEdges.at(Stage::Binarize));
    }
    let parts = split_components(&mask);
    let edges = edges_from_parts(&parts, img.width()).map_err(|e| e.at(Stage::ExtractEdges))?;
    let traps = find_trapezoids(&parts, img).map_err(|e| e.at(Stage::FitTrapezoid))?;
    let sol = calibrate_extrinsics(&top_corners(&traps), geom, k)
        .map_err(|e| e.at(Stage::CalibrateExtrinsics))?;

    let mut lifted: [Vec<Point3>; 2] = [Vec::new(), Vec::new()];
    let mut dropped = 0;
    for obs in &edges {
        let fine = refine_edge(img, obs, levels.background_mean, config.centroid_radius, config.end_trim);
        let r = reconstruct_edge(&fine, geom, &sol.pose, k).map_err(|e| e.at(Stage::ReconstructEdge))?;
        dropped += r.dropped;
        lifted[obs.side.index()] = r.points;
    }
    let merged: Vec<Point3> = lifted.iter().flatten().copied().collect();
    if let Some(p) = merged.iter().find(|p| !geom.contains(p)) {
        return Err(TactileError::OutOfBounds([p.x, p.y, p.z]).at(Stage::ReconstructEdge));
    }
    let (points, repeated) = resample_points(&merged, CLOUD_SIZE).map_err(|e| e.at(Stage::Resample))?;
    let cloud = TactilePointCloud::from_points(&points, source_sensor, timestamp)
        .map_err(|e| e.at(Stage::Resample))?;
    Ok(FrameReconstruction {
        cloud,
        extrinsics: sol.pose,
        corner_rms: sol.rms,
        edges: lifted,
        dropped,
        repeated,
    })
}

/// Distance from `p` to the nearest segment of `polyline`.
pub fn distance_to_polyline(p: &Point3, polyline: &[Point3]) -> f64 {
    if polyline.len() == 1 {
        return (p - polyline[0]).norm();
    }
    polyline
        .windows(2)
        .map(|s| {
            let (a, b) = (s[0], s[1]);
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared().max(f64::MIN_POSITIVE)).clamp(0.0, 1.0);
            (p - (a + ab * t)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// RMS distance of `points` to the nearest of `curves`.
pub fn rms_to_curves(points: &[Point3], curves: &[Vec<Point3>]) -> f64 {
    let sum: f64 = points
        .iter()
        .map(|p| {
            curves
                .iter()
                .map(|c| distance_to_polyline(p, c))
                .fold(f64::INFINITY, f64::min)
                .powi(2)
        })
        .sum();
    (sum / points.len().max(1) as f64).sqrt()
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff(a: &[Point3], b: &[Point3]) -> f64 {
    let directed = |x: &[Point3], y: &[Point3]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}
