//! Contact-layer outlines as trapezoids.

use crate::geometry::Pixel;
use crate::imaging::{approximate_quad, refine_quad_edges, signed_area, trace_outer_contour, GrayImage};

use super::{MaskParts, TactileError};

/// Fits a quadrilateral to a closed pixel chain and returns it top edge
/// first: top-left, top-right, bottom-right, bottom-left (clockwise with the
/// image v axis pointing down). The top edge is the side with the smallest
/// mean v.
pub fn fit_trapezoid(contour: &[Pixel]) -> Result<[Pixel; 4], TactileError> {
    if contour.len() < 8 {
        return Err(TactileError::DegenerateContour);
    }
    let (quad, _) = approximate_quad(contour).ok_or(TactileError::DegenerateContour)?;
    canonical_order(quad)
}

fn canonical_order(mut quad: [Pixel; 4]) -> Result<[Pixel; 4], TactileError> {
    let area = signed_area(&quad);
    if area.abs() < 1e-9 {
        return Err(TactileError::DegenerateContour);
    }
    if area < 0.0 {
        quad.reverse();
    }
    let top = (0..4)
        .min_by(|a, b| {
            let mv = |i: usize| quad[i].v + quad[(i + 1) % 4].v;
            mv(*a).total_cmp(&mv(*b))
        })
        .expect("four sides");
    // Clockwise with v down, the top side runs left to right.
    Ok(std::array::from_fn(|i| quad[(top + i) % 4]))
}

/// Contact-layer trapezoids of the two largest filled areas, left first,
/// with sides refined against the image gradient.
pub fn find_trapezoids(parts: &MaskParts, img: &GrayImage) -> Result<[[Pixel; 4]; 2], TactileError> {
    if parts.blobs.len() < 2 {
        return Err(TactileError::MissingTrapezoid(parts.blobs.len()));
    }
    let mut quads = Vec::with_capacity(2);
    for label in &parts.blobs[..2] {
        let contour = trace_outer_contour(&parts.labeling, *label);
        let quad = fit_trapezoid(&contour)?;
        let refined = refine_quad_edges(img, &quad);
        quads.push(canonical_order(refined)?);
    }
    let cu = |q: &[Pixel; 4]| q.iter().map(|p| p.u).sum::<f64>();
    quads.sort_by(|a, b| cu(a).total_cmp(&cu(b)));
    Ok([quads[0], quads[1]])
}

/// PnP correspondences from the two trapezoids: the top edge vertices,
/// ordered left to right across the image.
pub fn top_corners(trapezoids: &[[Pixel; 4]; 2]) -> [Pixel; 4] {
    [
        trapezoids[0][0],
        trapezoids[0][1],
        trapezoids[1][0],
        trapezoids[1][1],
    ]
}
