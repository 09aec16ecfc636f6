//! Square binary fiducial markers: encoding, detection, pose, and the
//! on-screen clock used to measure camera latency.
//!
//! A marker is a 6×6 cell grid: a black border around a 4×4 payload whose set
//! bits are white. Markers are described in a frame with x to the right and y
//! down, corners at `(±s/2, ±s/2, 0)`, so a marker facing the camera with an
//! identity pose looks exactly like its [`encode_marker`] image.

mod dictionary;
pub use dictionary::*;

use std::collections::BTreeMap;

use image::Luma;
use nalgebra::Vector2;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pixel, Point3, RigidTransform};
use crate::imaging::{
    adaptive_threshold_dark, approximate_quad, connected_components, is_convex,
    refine_quad_edges, sample_bilinear, signed_area, trace_outer_contour, GrayImage,
};
use crate::pnp::{self, PnpError, PnpSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiducialError {
    #[error("invalid dictionary: {0}")]
    InvalidDictionary(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("marker corners are degenerate")]
    DegenerateCorners,
    #[error("marker pose is ambiguous ({:.3} px vs {:.3} px)", best.rms, alternative.rms)]
    PnPAmbiguous {
        best: Box<PnpSolution>,
        alternative: Box<PnpSolution>,
    },
    #[error("no marker found")]
    NoMarker,
    #[error("marker {0} is not in the codebook")]
    UnknownId(u32),
    #[error("codebook maps two ids to the same display time")]
    CodebookNotInjective,
}

const BLACK: u8 = 0;
const WHITE: u8 = 255;

/// Renders the marker axis-aligned with `pixels_per_cell` pixels per cell.
pub fn encode_marker(desc: &MarkerDescriptor, pixels_per_cell: u32) -> GrayImage {
    let ppc = pixels_per_cell.max(1);
    let grid = desc.grid();
    let side = GRID as u32 * ppc;
    GrayImage::from_fn(side, side, |x, y| {
        let white = grid[(y / ppc) as usize][(x / ppc) as usize];
        Luma([if white { WHITE } else { BLACK }])
    })
}

/// One decoded marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerDetection {
    pub id: u32,
    /// Marker-frame corners top-left, top-right, bottom-right, bottom-left.
    pub corners: [Pixel; 4],
    /// Clockwise in-image rotation of the marker: 0, 90, 180 or 270.
    pub decode_rotation: u16,
    /// Payload bits that disagreed with the dictionary code.
    pub bit_errors: u32,
}

impl MarkerDetection {
    pub fn center(&self) -> Pixel {
        let (u, v) = self
            .corners
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p.u / 4.0, b + p.v / 4.0));
        Pixel::new(u, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Adaptive-threshold window radius; derived from the image size when
    /// `None`.
    pub window_radius: Option<u32>,
    /// A pixel is dark when it is this far below its local mean.
    pub threshold_offset: f64,
    /// Shortest accepted quad side, pixels.
    pub min_side: f64,
    /// Largest accepted payload Hamming distance.
    pub max_bit_errors: u32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_radius: None,
            threshold_offset: 7.0,
            min_side: 10.0,
            max_bit_errors: 1,
        }
    }
}

pub fn detect_markers(img: &GrayImage, dictionary: &Dictionary) -> Vec<MarkerDetection> {
    detect_markers_with(img, dictionary, &DetectorConfig::default())
}

pub fn detect_markers_with(
    img: &GrayImage,
    dictionary: &Dictionary,
    config: &DetectorConfig,
) -> Vec<MarkerDetection> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 || dictionary.is_empty() {
        return Vec::new();
    }
    let radius = config
        .window_radius
        .unwrap_or_else(|| (w.min(h) / 12).clamp(4, 32));
    // A white margin lets markers that touch the image border close their
    // outline.
    let pad = radius + 2;
    let mut padded = GrayImage::from_pixel(w + 2 * pad, h + 2 * pad, Luma([WHITE]));
    image::imageops::replace(&mut padded, img, i64::from(pad), i64::from(pad));

    let mask = adaptive_threshold_dark(&padded, radius, config.threshold_offset);
    let labeling = connected_components(&mask);
    let mut found: Vec<(MarkerDetection, f64)> = Vec::new();
    for comp in &labeling.components {
        if comp.bbox_width() < config.min_side as u32 || comp.bbox_height() < config.min_side as u32 {
            continue;
        }
        let contour = trace_outer_contour(&labeling, comp.label);
        let Some((mut quad, deviation)) = approximate_quad(&contour) else {
            continue;
        };
        let perimeter: f64 = (0..4).map(|i| quad[i].distance(&quad[(i + 1) % 4])).sum();
        if deviation > 1.5 + 0.02 * perimeter || !is_convex(&quad) {
            continue;
        }
        if (0..4).any(|i| quad[i].distance(&quad[(i + 1) % 4]) < config.min_side) {
            continue;
        }
        if signed_area(&quad) < 0.0 {
            quad.reverse();
        }
        let quad = refine_quad_edges(&padded, &quad);
        let start = (0..4)
            .min_by(|a, b| (quad[*a].u + quad[*a].v).total_cmp(&(quad[*b].u + quad[*b].v)))
            .unwrap_or(0);
        let quad: [Pixel; 4] = std::array::from_fn(|i| quad[(start + i) % 4]);
        let Some(observed) = read_payload(&padded, &quad) else {
            continue;
        };
        let Some((index, rot, dist)) = dictionary.identify(observed) else {
            continue;
        };
        if dist > config.max_bit_errors {
            continue;
        }
        let offset = f64::from(pad);
        let corners = std::array::from_fn(|i| {
            let p = quad[(i + rot) % 4];
            Pixel::new(p.u - offset, p.v - offset)
        });
        let det = MarkerDetection {
            id: dictionary.markers()[index].id,
            corners,
            decode_rotation: (rot * 90) as u16,
            bit_errors: dist,
        };
        found.push((det, signed_area(&quad)));
    }
    // One physical marker can surface twice (e.g. a payload blob decoding by
    // chance inside a real marker); keep the larger outline.
    found.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut out: Vec<MarkerDetection> = Vec::new();
    for (det, area) in found {
        let c = det.center();
        let overlaps = out
            .iter()
            .any(|o| o.center().distance(&c) < 0.5 * area.sqrt());
        if !overlaps {
            out.push(det);
        }
    }
    out
}

/// Samples the 6×6 cell grid through the quad's homography and returns the
/// payload if the border reads as solid black.
fn read_payload(img: &GrayImage, quad: &[Pixel; 4]) -> Option<u16> {
    let g = GRID as f64;
    let src = [(0.0, 0.0), (g, 0.0), (g, g), (0.0, g)].map(|(x, y)| Vector2::new(x, y));
    let dst = quad.map(|p| Vector2::new(p.u, p.v));
    let hom = pnp::fit_homography(&src, &dst)?;
    let mut cells = [[0.0f64; GRID]; GRID];
    for (r, row) in cells.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for sy in [-0.25, 0.0, 0.25] {
                for sx in [-0.25, 0.0, 0.25] {
                    let q = hom * nalgebra::Vector3::new(c as f64 + 0.5 + sx, r as f64 + 0.5 + sy, 1.0);
                    acc += sample_bilinear(img, q.x / q.z, q.y / q.z);
                }
            }
            *cell = acc / 9.0;
        }
    }
    let values: Vec<f64> = cells.iter().flatten().copied().collect();
    let threshold = two_class_threshold(&values)?;
    let on_border = |r: usize, c: usize| r == 0 || c == 0 || r == GRID - 1 || c == GRID - 1;
    let mut code = 0u16;
    for (r, row) in cells.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let white = *v > threshold;
            if on_border(r, c) {
                if white {
                    return None;
                }
            } else if white {
                code |= 1 << (15 - ((r - 1) * PAYLOAD + (c - 1)));
            }
        }
    }
    Some(code)
}

/// Otsu split of a handful of cell means; `None` without real contrast.
fn two_class_threshold(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi - lo < 30.0 {
        return None;
    }
    let n = sorted.len();
    let total: f64 = sorted.iter().sum();
    let mut best = (f64::MIN, lo);
    let mut acc = 0.0;
    for i in 0..n - 1 {
        acc += sorted[i];
        let (n0, n1) = ((i + 1) as f64, (n - i - 1) as f64);
        let (m0, m1) = (acc / n0, (total - acc) / n1);
        let between = n0 * n1 * (m0 - m1).powi(2);
        if between > best.0 {
            best = (between, 0.5 * (sorted[i] + sorted[i + 1]));
        }
    }
    Some(best.1)
}

/// Marker-frame corners in detection order.
pub fn marker_object_points(size: f64) -> [Point3; 4] {
    let h = size / 2.0;
    [
        Point3::new(-h, -h, 0.0),
        Point3::new(h, -h, 0.0),
        Point3::new(h, h, 0.0),
        Point3::new(-h, h, 0.0),
    ]
}

/// Camera-from-marker pose of a detection of a marker `size` meters wide.
pub fn estimate_marker_pose(
    det: &MarkerDetection,
    size: f64,
    k: &CameraIntrinsics,
) -> Result<PnpSolution, FiducialError> {
    let object = marker_object_points(size);
    pnp::solve_planar(&object, &det.corners, k).map_err(|e| match e {
        PnpError::Ambiguous { best, alternative } => FiducialError::PnPAmbiguous { best, alternative },
        _ => FiducialError::DegenerateCorners,
    })
}

/// Like [`estimate_marker_pose`], but settles an ambiguity on the lower-error
/// solution.
pub fn marker_pose_best(
    det: &MarkerDetection,
    size: f64,
    k: &CameraIntrinsics,
) -> Result<RigidTransform, FiducialError> {
    match estimate_marker_pose(det, size, k) {
        Ok(s) => Ok(s.pose),
        Err(FiducialError::PnPAmbiguous { best, .. }) => Ok(best.pose),
        Err(e) => Err(e),
    }
}

/// Display time of every clock marker id.
///
/// A clock screen usually cycles through the dictionary, so the same id
/// recurs every `period` seconds. With a period set, latencies are wrapped
/// into `[-period/2, period/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockCodebook {
    times: BTreeMap<u32, f64>,
    period: Option<f64>,
}

impl ClockCodebook {
    pub fn new(times: BTreeMap<u32, f64>, period: Option<f64>) -> Result<Self, FiducialError> {
        let mut seen: Vec<f64> = times.values().copied().collect();
        seen.sort_by(f64::total_cmp);
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(FiducialError::CodebookNotInjective);
        }
        Ok(Self { times, period })
    }

    /// `ids[i]` shown from `start + i · interval`, repeating every
    /// `ids.len() · interval`.
    pub fn cycle(ids: &[u32], start: f64, interval: f64) -> Self {
        let times = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, start + i as f64 * interval))
            .collect();
        Self {
            times,
            period: Some(ids.len() as f64 * interval),
        }
    }

    pub fn display_time(&self, id: u32) -> Option<f64> {
        self.times.get(&id).copied()
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    /// Latency `t_rec - t_actual`, unwrapped over the display cycle.
    pub fn latency(&self, id: u32, t_rec: f64) -> Option<f64> {
        let raw = t_rec - self.display_time(id)?;
        Some(match self.period {
            Some(p) if p > 0.0 => raw - p * (raw / p + 0.5).floor(),
            _ => raw,
        })
    }

    /// Id shown at time `t` (for renderers).
    pub fn id_at(&self, t: f64) -> Option<u32> {
        let p = self.period?;
        let (first_id, first) = self.times.iter().min_by(|a, b| a.1.total_cmp(b.1))?;
        // The tolerance keeps exact slot boundaries from rounding into the
        // previous slot.
        let phase = (t - first + 1e-9).rem_euclid(p) - 1e-9 + first;
        let mut best = (*first_id, f64::MAX);
        for (id, s) in &self.times {
            let d = phase - s;
            if d >= -1e-9 && d < best.1 {
                best = (*id, d);
            }
        }
        Some(best.0)
    }
}

/// Display time of the first codebook marker visible in `img`.
pub fn decode_clock(
    img: &GrayImage,
    codebook: &ClockCodebook,
    dictionary: &Dictionary,
) -> Result<(u32, f64), FiducialError> {
    let dets = detect_markers(img, dictionary);
    let first = dets.first().ok_or(FiducialError::NoMarker)?;
    dets.iter()
        .find_map(|d| codebook.display_time(d.id).map(|t| (d.id, t)))
        .ok_or(FiducialError::UnknownId(first.id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Handedness;
    use crate::synth::marker::render_markers;
    use nalgebra::Vector3;

    fn dict() -> Dictionary {
        Dictionary::builtin(0.05)
    }

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn rotate_image_cw(img: &GrayImage) -> GrayImage {
        image::imageops::rotate90(img)
    }

    #[test]
    fn encode_has_black_border() {
        let img = encode_marker(&dict().markers()[0], 4);
        assert_eq!(img.dimensions(), (24, 24));
        for i in 0..24 {
            for j in [0, 1, 2, 3, 20, 21, 22, 23] {
                assert_eq!(img.get_pixel(i, j)[0], 0);
                assert_eq!(img.get_pixel(j, i)[0], 0);
            }
        }
    }

    #[test]
    fn round_trip_under_image_rotations() {
        let d = dict();
        for m in d.markers() {
            let mut img = encode_marker(m, 4);
            for rot in [0u16, 90, 180, 270] {
                let dets = detect_markers(&img, &d);
                assert_eq!(dets.len(), 1, "id {} rot {rot}", m.id);
                assert_eq!(dets[0].id, m.id);
                assert_eq!(dets[0].decode_rotation, rot, "id {}", m.id);
                img = rotate_image_cw(&img);
            }
        }
    }

    #[test]
    fn canonical_corners_follow_the_marker() {
        // After a clockwise rotation of a 24 px image, marker-frame
        // top-left moves from (0, 0) to (23, 0) in pixel-edge terms.
        let d = dict();
        let img = rotate_image_cw(&encode_marker(&d.markers()[3], 8));
        let det = detect_markers(&img, &d)[0];
        let tl = det.corners[0];
        assert!((tl.u - 47.5).abs() < 0.3 && (tl.v + 0.5).abs() < 0.3, "{tl:?}");
    }

    #[test]
    fn blank_image_has_no_markers() {
        let img = GrayImage::from_pixel(64, 64, Luma([200]));
        assert!(detect_markers(&img, &dict()).is_empty());
    }

    #[test]
    fn perspective_render_localizes_corners() {
        let d = dict();
        let pose = RigidTransform::from_axis_angle(
            Vector3::new(1.0, 0.4, 0.0),
            40f64.to_radians(),
            Vector3::new(0.01, -0.01, 0.3),
            Handedness::Right,
        );
        let (img, truth) = render_markers(&[(d.markers()[7], pose)], &k()).unwrap();
        let dets = detect_markers(&img, &d);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].id, 7);
        for (c, t) in dets[0].corners.iter().zip(&truth[0]) {
            assert!(c.distance(t) <= 0.5, "{c:?} vs {t:?}");
        }
        let est = marker_pose_best(&dets[0], 0.05, &k()).unwrap();
        assert!((est.translation() - pose.translation()).norm() < 1e-3);
    }

    #[test]
    fn two_markers_are_both_found() {
        let d = dict();
        let a = RigidTransform::from_translation(Vector3::new(-0.06, 0.0, 0.35), Handedness::Right);
        let b = RigidTransform::from_axis_angle(
            Vector3::y(),
            0.4,
            Vector3::new(0.07, 0.02, 0.35),
            Handedness::Right,
        );
        let (img, _) = render_markers(&[(d.markers()[1], a), (d.markers()[2], b)], &k()).unwrap();
        let mut ids: Vec<u32> = detect_markers(&img, &d).iter().map(|x| x.id).collect();
        ids.sort();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn fronto_parallel_pose_depth() {
        let d = dict();
        let pose = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.3), Handedness::Right);
        let (img, _) = render_markers(&[(d.markers()[0], pose)], &k()).unwrap();
        let det = detect_markers(&img, &d)[0];
        let sol = estimate_marker_pose(&det, 0.05, &k()).unwrap();
        assert!((sol.pose.translation().z - 0.30).abs() < 1e-3);
        assert!(sol.rms <= 0.5);
    }

    #[test]
    fn tilted_marker_rotation_recovered() {
        let d = dict();
        let pose = RigidTransform::from_axis_angle(
            Vector3::x(),
            30f64.to_radians(),
            Vector3::new(0.0, 0.0, 0.3),
            Handedness::Right,
        );
        let (img, _) = render_markers(&[(d.markers()[4], pose)], &k()).unwrap();
        let det = detect_markers(&img, &d)[0];
        let est = marker_pose_best(&det, 0.05, &k()).unwrap();
        assert!(est.rotation().angle_to(pose.rotation()).to_degrees() < 0.5);
    }

    #[test]
    fn collinear_detection_is_degenerate() {
        let det = MarkerDetection {
            id: 0,
            corners: [0.0, 1.0, 2.0, 3.0].map(|x| Pixel::new(x, x)),
            decode_rotation: 0,
            bit_errors: 0,
        };
        assert_eq!(
            estimate_marker_pose(&det, 0.05, &k()),
            Err(FiducialError::DegenerateCorners)
        );
    }

    #[test]
    fn clock_lookup_and_errors() {
        let d = dict();
        let mut times = BTreeMap::new();
        times.insert(37, 12.5);
        let book = ClockCodebook::new(times, None).unwrap();
        let img = encode_marker(d.get(37).unwrap(), 6);
        assert_eq!(decode_clock(&img, &book, &d), Ok((37, 12.5)));
        let lat = book.latency(37, 12.640).unwrap();
        assert!((lat - 0.140).abs() < 1e-12);
        let blank = GrayImage::from_pixel(40, 40, Luma([255]));
        assert_eq!(decode_clock(&blank, &book, &d), Err(FiducialError::NoMarker));
        let other = encode_marker(d.get(3).unwrap(), 6);
        assert_eq!(decode_clock(&other, &book, &d), Err(FiducialError::UnknownId(3)));
    }

    #[test]
    fn cyclic_codebook_unwraps_latency() {
        let ids: Vec<u32> = (0..50).collect();
        let book = ClockCodebook::cycle(&ids, 0.0, 1.0 / 30.0);
        // Shown at 100 s: the id cycled many times since start.
        let t = 100.0;
        let id = book.id_at(t).unwrap();
        let lat = book.latency(id, t + 0.14).unwrap();
        assert!((lat - 0.14).abs() < 1e-9, "{lat}");
    }

    #[test]
    fn non_injective_codebook_rejected() {
        let times = BTreeMap::from([(1, 2.0), (2, 2.0)]);
        assert_eq!(
            ClockCodebook::new(times, None),
            Err(FiducialError::CodebookNotInjective)
        );
    }

    #[test]
    fn dictionary_text_round_trip() {
        let d = dict();
        let back = Dictionary::from_text(&d.to_text()).unwrap();
        assert_eq!(back, d);
        assert!(matches!(
            Dictionary::from_text("dictionary 1\nmarker 0 0.02\n10x1\n"),
            Err(FiducialError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn builtin_dictionary_is_rotation_unambiguous() {
        let d = dict();
        for (i, a) in d.markers().iter().enumerate() {
            let ra = rotations(a.code);
            for r in &ra[1..] {
                assert!((r ^ a.code).count_ones() >= MIN_DISTANCE);
            }
            for b in &d.markers()[i + 1..] {
                for r in ra {
                    assert!((r ^ b.code).count_ones() >= MIN_DISTANCE);
                }
            }
        }
    }
}
