//! Binarization and inner-edge extraction.

use crate::geometry::Pixel;
use crate::imaging::{
    connected_components, otsu, threshold_above, BitMask, Component, GrayImage, Labeling,
};

use super::{EdgeObservation, Face, TactileError};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BinarizeMethod {
    /// Global Otsu threshold.
    #[default]
    Otsu,
    /// Foreground is strictly above this level.
    Fixed(u8),
}

/// Foreground = lit edge structures.
pub fn binarize(img: &GrayImage, method: BinarizeMethod) -> BitMask {
    let t = match method {
        BinarizeMethod::Otsu => otsu(img).threshold,
        BinarizeMethod::Fixed(t) => t,
    };
    threshold_above(img, t)
}

/// Components thinner than this (pixels per unit of bounding-box length) are
/// edge strokes; thicker ones are lit contact-layer areas.
pub const STROKE_THICKNESS: f64 = 8.0;
/// Smaller components are treated as speckle.
pub const MIN_COMPONENT: usize = 20;
/// Fewest pixels in an edge chain.
pub const MIN_EDGE_PIXELS: usize = 8;

/// Mask components split into edge strokes and filled areas, each list
/// sorted by size, largest first.
#[derive(Debug, Clone)]
pub struct MaskParts {
    pub labeling: Labeling,
    pub strokes: Vec<u32>,
    pub blobs: Vec<u32>,
}

impl MaskParts {
    pub fn component(&self, label: u32) -> &Component {
        &self.labeling.components[label as usize - 1]
    }
}

pub fn split_components(mask: &BitMask) -> MaskParts {
    let labeling = connected_components(mask);
    let mut strokes = Vec::new();
    let mut blobs = Vec::new();
    for c in &labeling.components {
        if c.len() < MIN_COMPONENT {
            continue;
        }
        if c.thickness() < STROKE_THICKNESS {
            strokes.push(c.label);
        } else {
            blobs.push(c.label);
        }
    }
    let size = |l: &u32| std::cmp::Reverse(labeling.components[*l as usize - 1].len());
    strokes.sort_by_key(size);
    blobs.sort_by_key(size);
    MaskParts {
        labeling,
        strokes,
        blobs,
    }
}

/// Centerline of a stroke component: one sample per row (or column, for
/// mostly horizontal strokes) at the mean foreground coordinate, without the
/// end caps.
fn chain_of(comp: &Component) -> Vec<Pixel> {
    let vertical = comp.bbox_height() >= comp.bbox_width();
    let (lo, n) = if vertical {
        (comp.min_y, comp.bbox_height())
    } else {
        (comp.min_x, comp.bbox_width())
    };
    let mut sum = vec![0.0f64; n as usize];
    let mut cnt = vec![0u32; n as usize];
    for (x, y) in &comp.pixels {
        let (major, minor) = if vertical { (*y, *x) } else { (*x, *y) };
        sum[(major - lo) as usize] += f64::from(minor);
        cnt[(major - lo) as usize] += 1;
    }
    // Round end caps run past the curve's ends by half the stroke width.
    let cap = (comp.thickness() / 2.0).ceil() as usize;
    let rows: Vec<usize> = (0..n as usize).filter(|i| cnt[*i] > 0).collect();
    if rows.len() <= 2 * cap {
        return Vec::new();
    }
    rows[cap..rows.len() - cap]
        .iter()
        .map(|&i| {
            let major = f64::from(lo) + i as f64;
            let minor = sum[i] / f64::from(cnt[i]);
            if vertical {
                Pixel::new(minor, major)
            } else {
                Pixel::new(major, minor)
            }
        })
        .collect()
}

/// The two inner-edge strokes, left face first.
///
/// The camera sits between the faces, so the stroke whose centroid is left
/// of the image center belongs to the left face.
pub fn extract_edges(mask: &BitMask) -> Result<Vec<EdgeObservation>, TactileError> {
    edges_from_parts(&split_components(mask), mask.width())
}

pub fn edges_from_parts(parts: &MaskParts, width: u32) -> Result<Vec<EdgeObservation>, TactileError> {
    let mid = f64::from(width) / 2.0;
    let mut obs: Vec<EdgeObservation> = parts
        .strokes
        .iter()
        .map(|l| parts.component(*l))
        .filter_map(|c| {
            let pixels = chain_of(c);
            (pixels.len() >= MIN_EDGE_PIXELS).then(|| EdgeObservation {
                side: if c.centroid().u < mid {
                    Face::Left
                } else {
                    Face::Right
                },
                pixels,
            })
        })
        .collect();
    // Largest stroke per side.
    let mut picked: Vec<EdgeObservation> = Vec::new();
    for face in Face::BOTH {
        if let Some(i) = obs.iter().position(|o| o.side == face) {
            picked.push(obs.swap_remove(i));
        }
    }
    match picked.len() {
        0 => Err(TactileError::NoEdges),
        1 => Err(TactileError::OneEdgeOnly(picked.remove(0))),
        _ => Ok(picked),
    }
}

/// Sub-pixel centerline: for every chain sample, the intensity-weighted
/// centroid across the stroke (above `background`) within ±`radius` pixels.
/// The first and last `trim` samples, where end caps bias the centroid, are
/// dropped.
pub fn refine_edge(
    img: &GrayImage,
    obs: &EdgeObservation,
    background: f64,
    radius: i64,
    trim: usize,
) -> EdgeObservation {
    let px = &obs.pixels;
    let vertical = match (px.first(), px.last()) {
        (Some(a), Some(b)) => (b.v - a.v).abs() >= (b.u - a.u).abs(),
        _ => true,
    };
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    let end = px.len().saturating_sub(trim);
    let pixels = px
        .iter()
        .take(end)
        .skip(trim)
        .map(|p| {
            let (major, minor) = if vertical { (p.v, p.u) } else { (p.u, p.v) };
            let (m, c) = (major.round() as i64, minor.round() as i64);
            let (mut sw, mut swx) = (0.0, 0.0);
            for o in c - radius..=c + radius {
                let (x, y) = if vertical { (o, m) } else { (m, o) };
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                let wgt = (f64::from(img.get_pixel(x as u32, y as u32)[0]) - background).max(0.0);
                sw += wgt;
                swx += wgt * o as f64;
            }
            let minor = if sw > 0.0 { swx / sw } else { minor };
            if vertical {
                Pixel::new(minor, major)
            } else {
                Pixel::new(major, minor)
            }
        })
        .collect();
    EdgeObservation {
        pixels,
        side: obs.side,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Canvas;
    use image::Luma;

    #[test]
    fn black_and_white_images() {
        let black = GrayImage::new(32, 24);
        assert!(binarize(&black, BinarizeMethod::Otsu).is_empty());
        let white = GrayImage::from_pixel(32, 24, Luma([255]));
        assert_eq!(binarize(&white, BinarizeMethod::Otsu).count(), 32 * 24);
        let mid = GrayImage::from_pixel(4, 4, Luma([100]));
        assert!(binarize(&mid, BinarizeMethod::Fixed(99)).count() == 16);
    }

    #[test]
    fn empty_mask_has_no_edges() {
        assert_eq!(extract_edges(&BitMask::new(10, 10)), Err(TactileError::NoEdges));
    }

    #[test]
    fn single_stroke_is_partial() {
        let mut c = Canvas::new(100, 100);
        c.stroke_polyline(&[Pixel::new(70.0, 10.0), Pixel::new(75.0, 90.0)], 3.0);
        let mask = threshold_above(&c.to_image(0.0, 255.0), 127);
        match extract_edges(&mask) {
            Err(TactileError::OneEdgeOnly(o)) => {
                assert_eq!(o.side, Face::Right);
                assert!(o.pixels.windows(2).all(|w| w[1].v > w[0].v));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn refined_centerline_is_subpixel() {
        let mut c = Canvas::new(100, 100);
        let (a, b) = (Pixel::new(30.3, 10.0), Pixel::new(40.7, 90.0));
        c.stroke_polyline(&[a, b], 3.0);
        let img = c.to_image(10.0, 240.0);
        let edges = edges_from_parts(&split_components(&binarize(&img, BinarizeMethod::Otsu)), 200)
            .unwrap_err();
        let TactileError::OneEdgeOnly(obs) = edges else { panic!() };
        let fine = refine_edge(&img, &obs, 10.0, 4, 2);
        for p in &fine.pixels {
            let t = (p.v - a.v) / (b.v - a.v);
            let u = a.u + t * (b.u - a.u);
            assert!((p.u - u).abs() < 0.05, "{p:?} vs {u}");
        }
    }
}
