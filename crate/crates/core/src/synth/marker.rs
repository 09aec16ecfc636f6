//! Perspective renders of fiducial markers.

use crate::fiducial::{marker_object_points, MarkerDescriptor, GRID};
use crate::geometry::{project, CameraIntrinsics, Pixel, Point3, RigidTransform};
use crate::imaging::{Canvas, GrayImage};

use super::SynthError;

/// Paper white and ink black of rendered markers.
pub const PAPER: f64 = 235.0;
pub const INK: f64 = 20.0;

fn project_in_view(p: &Point3, pose: &RigidTransform, k: &CameraIntrinsics) -> Result<Pixel, SynthError> {
    let c = pose.transform_point(p);
    let px = project(&c, k).map_err(|_| SynthError::EdgeOutOfView(format!("{p:?} behind camera")))?;
    if px.u < 0.0 || px.v < 0.0 || px.u > f64::from(k.width) - 1.0 || px.v > f64::from(k.height) - 1.0 {
        return Err(SynthError::EdgeOutOfView(format!("{px:?} outside image")));
    }
    Ok(px)
}

/// Draws the black cells of each marker (camera-from-marker pose) onto a
/// canvas, returning the projected outer corners (TL, TR, BR, BL).
pub fn draw_marker(
    canvas: &mut Canvas,
    desc: &MarkerDescriptor,
    pose: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<[Pixel; 4], SynthError> {
    let s = desc.physical_size;
    let cell = s / GRID as f64;
    let grid = desc.grid();
    let corners = marker_object_points(s);
    let mut outer = [Pixel::new(0.0, 0.0); 4];
    for (o, c) in outer.iter_mut().zip(&corners) {
        *o = project_in_view(c, pose, k)?;
    }
    for (r, row) in grid.iter().enumerate() {
        for (c, white) in row.iter().enumerate() {
            if *white {
                continue;
            }
            let x0 = -s / 2.0 + c as f64 * cell;
            let y0 = -s / 2.0 + r as f64 * cell;
            let quad = [
                Point3::new(x0, y0, 0.0),
                Point3::new(x0 + cell, y0, 0.0),
                Point3::new(x0 + cell, y0 + cell, 0.0),
                Point3::new(x0, y0 + cell, 0.0),
            ];
            let poly = quad
                .iter()
                .map(|p| project_in_view(p, pose, k))
                .collect::<Result<Vec<_>, _>>()?;
            canvas.fill_polygon(&poly);
        }
    }
    Ok(outer)
}

/// Renders markers on white paper. Straight edges stay straight under a
/// pinhole camera, so projecting cell corners and filling the resulting
/// polygons with area coverage is exact up to supersampling.
pub fn render_markers(
    markers: &[(MarkerDescriptor, RigidTransform)],
    k: &CameraIntrinsics,
) -> Result<(GrayImage, Vec<[Pixel; 4]>), SynthError> {
    let mut canvas = Canvas::new(k.width, k.height);
    let mut corners = Vec::with_capacity(markers.len());
    for (desc, pose) in markers {
        corners.push(draw_marker(&mut canvas, desc, pose, k)?);
    }
    Ok((canvas.to_image(PAPER, INK), corners))
}
