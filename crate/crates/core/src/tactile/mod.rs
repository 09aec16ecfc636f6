//! Global deformation reconstruction of a two-faced visuo-tactile sensor from
//! its internal camera image.
//!
//! Each contact face bends only within a fixed plane, so every pixel of an
//! inner edge can be lifted to 3-D by intersecting its viewing ray with that
//! plane. The plane is known in the sensor's CAD frame; the camera-from-CAD
//! transform is recovered per frame by PnP on the top corners of the two
//! contact-layer trapezoids.

mod edges;
mod recon;
mod sampling;
mod trapezoid;

pub use edges::*;
pub use recon::*;
pub use sampling::*;
pub use trapezoid::*;

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Pixel, Plane, Point3};
use crate::pnp::PnpError;

/// Points per tactile cloud.
pub const CLOUD_SIZE: usize = 256;
/// Bytes of one serialized cloud: 256 × 3 little-endian `f32`.
pub const CLOUD_BYTES: usize = CLOUD_SIZE * 3 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Left,
    Right,
}

impl Face {
    pub const BOTH: [Face; 2] = [Face::Left, Face::Right];

    pub fn index(self) -> usize {
        match self {
            Face::Left => 0,
            Face::Right => 1,
        }
    }
}

/// Pipeline stage, for error reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Binarize,
    ExtractEdges,
    FitTrapezoid,
    CalibrateExtrinsics,
    ReconstructEdge,
    Resample,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Binarize => "binarize",
            Stage::ExtractEdges => "extract_edges",
            Stage::FitTrapezoid => "fit_trapezoid",
            Stage::CalibrateExtrinsics => "calibrate_extrinsics",
            Stage::ReconstructEdge => "reconstruct_edge",
            Stage::Resample => "resample",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TactileError {
    #[error("no edges in the mask")]
    NoEdges,
    #[error("only the {:?} face edge was found", .0.side)]
    OneEdgeOnly(EdgeObservation),
    #[error("contour is degenerate")]
    DegenerateContour,
    #[error("expected two contact-layer outlines, found {0}")]
    MissingTrapezoid(usize),
    #[error("corner configuration is degenerate")]
    DegenerateConfiguration,
    #[error("corner reprojection RMS {0:.2} px exceeds the limit")]
    HighResidual(f64),
    #[error("every pixel of the edge was dropped")]
    EmptyEdge,
    #[error("empty input")]
    EmptyInput,
    #[error("point {0:?} outside the sensor bounds")]
    OutOfBounds([f64; 3]),
    #[error("a cloud holds exactly 256 points, got {0}")]
    WrongPointCount(usize),
    #[error("invalid sensor geometry: {0}")]
    InvalidGeometry(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        source: Box<TactileError>,
    },
}

impl TactileError {
    fn at(self, stage: Stage) -> Self {
        match self {
            e @ TactileError::Stage { .. } => e,
            e => TactileError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The error without its stage wrapper.
    pub fn root(&self) -> &TactileError {
        match self {
            TactileError::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<PnpError> for TactileError {
    fn from(_: PnpError) -> Self {
        TactileError::DegenerateConfiguration
    }
}

/// Ordered pixels along one inner edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeObservation {
    pub pixels: Vec<Pixel>,
    pub side: Face,
}

/// Sensor description in its CAD frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GeometryFile", try_from = "GeometryFile")]
pub struct SensorGeometry {
    /// Top corners of the two contact layers as they appear left to right
    /// in the image: left outer, left inner, right inner, right outer.
    pub cad_corners: [Point3; 4],
    /// Whether the corners are coplanar, which selects the planar PnP
    /// solver.
    pub corners_coplanar: bool,
    /// Plane of each face's inner edge, `[left, right]`.
    pub edge_planes: [Plane; 2],
    /// Undeformed inner edges, `[left, right]`.
    pub rest_edges: [Vec<Point3>; 2],
}

/// Tolerance for rest edges lying on their planes.
const PLANE_TOLERANCE: f64 = 1e-9;

impl SensorGeometry {
    pub fn new(
        cad_corners: [Point3; 4],
        corners_coplanar: bool,
        edge_planes: [Plane; 2],
        rest_edges: [Vec<Point3>; 2],
    ) -> Result<Self, TactileError> {
        for (face, (plane, edge)) in edge_planes.iter().zip(&rest_edges).enumerate() {
            if edge.len() < 2 {
                return Err(TactileError::InvalidGeometry(format!(
                    "rest edge {face} needs at least two points"
                )));
            }
            if let Some(p) = edge
                .iter()
                .find(|p| plane.signed_distance(p).abs() > PLANE_TOLERANCE)
            {
                return Err(TactileError::InvalidGeometry(format!(
                    "rest edge {face} leaves its plane at {p:?}"
                )));
            }
        }
        if corners_coplanar && !crate::pnp::is_coplanar(&cad_corners, 1e-6) {
            return Err(TactileError::InvalidGeometry(
                "corners flagged coplanar but are not".into(),
            ));
        }
        Ok(Self {
            cad_corners,
            corners_coplanar,
            edge_planes,
            rest_edges,
        })
    }

    /// Axis-aligned bounds of corners and rest edges, each half-extent grown
    /// by 20%.
    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in self.cad_corners.iter().chain(self.rest_edges.iter().flatten()) {
            lo = lo.inf(&p.coords);
            hi = hi.sup(&p.coords);
        }
        let c = (lo + hi) / 2.0;
        let h = (hi - lo) / 2.0 * 1.2;
        (Point3::from(c - h), Point3::from(c + h))
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let (lo, hi) = self.bounds();
        (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&GeometryFile::from(self)).expect("geometry serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, TactileError> {
        let file: GeometryFile =
            toml::from_str(text).map_err(|e| TactileError::InvalidGeometry(e.to_string()))?;
        file.try_into()
    }

    pub fn load(path: &Path) -> Result<Self, TactileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TactileError::InvalidGeometry(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// On-disk form of [`SensorGeometry`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct GeometryFile {
    pub corners: Vec<[f64; 3]>,
    pub corners_coplanar: bool,
    pub left_plane: PlaneFile,
    pub right_plane: PlaneFile,
    pub left_rest_edge: Vec<[f64; 3]>,
    pub right_rest_edge: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct PlaneFile {
    pub normal: [f64; 3],
    pub offset: f64,
}

fn arr(p: &Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

impl From<&SensorGeometry> for GeometryFile {
    fn from(g: &SensorGeometry) -> Self {
        let plane = |p: &Plane| PlaneFile {
            normal: [p.normal.x, p.normal.y, p.normal.z],
            offset: p.offset,
        };
        Self {
            corners: g.cad_corners.iter().map(arr).collect(),
            corners_coplanar: g.corners_coplanar,
            left_plane: plane(&g.edge_planes[0]),
            right_plane: plane(&g.edge_planes[1]),
            left_rest_edge: g.rest_edges[0].iter().map(arr).collect(),
            right_rest_edge: g.rest_edges[1].iter().map(arr).collect(),
        }
    }
}

impl From<SensorGeometry> for GeometryFile {
    fn from(g: SensorGeometry) -> Self {
        GeometryFile::from(&g)
    }
}

impl TryFrom<GeometryFile> for SensorGeometry {
    type Error = TactileError;

    fn try_from(f: GeometryFile) -> Result<Self, TactileError> {
        let corners: [Point3; 4] = f
            .corners
            .iter()
            .map(|c| Point3::from(*c))
            .collect::<Vec<_>>()
            .try_into()
            .map_err(|_| TactileError::InvalidGeometry("need exactly 4 corners".into()))?;
        let plane = |p: &PlaneFile| {
            Plane::new(Vector3::from(p.normal), p.offset)
                .map_err(|e: GeometryError| TactileError::InvalidGeometry(e.to_string()))
        };
        let pts = |v: &[[f64; 3]]| v.iter().map(|c| Point3::from(*c)).collect::<Vec<_>>();
        SensorGeometry::new(
            corners,
            f.corners_coplanar,
            [plane(&f.left_plane)?, plane(&f.right_plane)?],
            [pts(&f.left_rest_edge), pts(&f.right_rest_edge)],
        )
    }
}

/// 256 points in the sensor CAD frame.
///
/// Points are held as `f32`, the serialized precision, so a cloud survives a
/// write/read cycle bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TactilePointCloud {
    points: Vec<[f32; 3]>,
    pub source_sensor: String,
    pub timestamp: f64,
}

impl TactilePointCloud {
    pub fn new(
        points: Vec<[f32; 3]>,
        source_sensor: impl Into<String>,
        timestamp: f64,
    ) -> Result<Self, TactileError> {
        if points.len() != CLOUD_SIZE {
            return Err(TactileError::WrongPointCount(points.len()));
        }
        Ok(Self {
            points,
            source_sensor: source_sensor.into(),
            timestamp,
        })
    }

    pub fn from_points(
        points: &[Point3],
        source_sensor: impl Into<String>,
        timestamp: f64,
    ) -> Result<Self, TactileError> {
        let pts = points
            .iter()
            .map(|p| [p.x as f32, p.y as f32, p.z as f32])
            .collect();
        Self::new(pts, source_sensor, timestamp)
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn points_f64(&self) -> Vec<Point3> {
        self.points
            .iter()
            .map(|p| Point3::new(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])))
            .collect()
    }

    /// 256×3 little-endian `f32`, row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CLOUD_BYTES);
        for p in &self.points {
            for c in p {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    pub fn points_from_le_bytes(bytes: &[u8]) -> Result<Vec<[f32; 3]>, TactileError> {
        if bytes.len() != CLOUD_BYTES {
            return Err(TactileError::WrongPointCount(bytes.len() / 12));
        }
        Ok(bytes
            .chunks_exact(12)
            .map(|c| {
                let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]);
                [f(0), f(4), f(8)]
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sensor::SensorDesign;

    #[test]
    fn geometry_round_trips_through_toml() {
        let g = SensorDesign::default().geometry();
        let back = SensorGeometry::from_toml(&g.to_toml()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn off_plane_rest_edge_is_rejected() {
        let g = SensorDesign::default().geometry();
        let mut edges = g.rest_edges.clone();
        edges[0][3].x += 1e-6;
        let err = SensorGeometry::new(g.cad_corners, true, g.edge_planes, edges).unwrap_err();
        assert!(matches!(err, TactileError::InvalidGeometry(_)));
    }

    #[test]
    fn cloud_bytes_round_trip() {
        let pts: Vec<[f32; 3]> = (0..CLOUD_SIZE)
            .map(|i| [i as f32 * 1e-4, -(i as f32) * 3e-5, 0.01])
            .collect();
        let c = TactilePointCloud::new(pts.clone(), "s", 1.0).unwrap();
        let bytes = c.to_le_bytes();
        assert_eq!(bytes.len(), CLOUD_BYTES);
        assert_eq!(TactilePointCloud::points_from_le_bytes(&bytes).unwrap(), pts);
        assert_eq!(
            TactilePointCloud::new(pts[..10].to_vec(), "s", 0.0),
            Err(TactileError::WrongPointCount(10))
        );
    }
}
