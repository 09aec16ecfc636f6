//! Raw recording → calibrated, aligned, reconstructed episode.

mod container;
mod inspect;

pub use container::*;
pub use inspect::*;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fiducial::{detect_markers, marker_pose_best, Dictionary};
use crate::geometry::{Handedness, RigidTransform};
use crate::handeye::{controller_to_ee, gripper_width, GripperState, HandEyeError, MAX_GRIPPER_WIDTH};
use crate::imaging::GrayImage;
use crate::session::{camera_stream_id, Calibration, CalibrationError, Camera, Hand, RawRecording, SessionError};
use crate::sync::{
    align_streams, measure_camera_latency, measure_pose_latency, AlignConfig, ClockReader, DirectorySource, LatencyTable, AlignInput, AlignedFrame, FrameRef, PoseStream, Sample, Stream,
    SyncError, MAX_SKEW,
};
use crate::tactile::{reconstruct_frame, ReconConfig, TactileError, TactilePointCloud, CLOUD_SIZE, MAX_CORNER_RMS};

/// Largest share of skew-invalid frames an accepted episode may lose.
pub const MAX_INVALID_FRACTION: f64 = 0.05;
/// Tolerance of the delta-chain check, meters / radians.
pub const DELTA_CHAIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("ingest: {0}")]
    Session(#[from] SessionError),
    #[error("calibration: {0}")]
    Calibration(#[from] CalibrationError),
    #[error("align: {0}")]
    Sync(#[from] SyncError),
    #[error("hand-eye: {0}")]
    HandEye(#[from] HandEyeError),
    #[error("reconstruct {stream} at t={t:.4}: {source}")]
    Tactile {
        stream: String,
        t: f64,
        source: TactileError,
    },
    #[error("episode needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("recording has no pedal press {0}")]
    NoSuchPress(usize),
    #[error("gripper markers of the {0} hand were never detected")]
    NoGripperMarkers(&'static str),
    #[error("episode rejected: {} of {} frames dropped", .0.dropped_frames, .0.frames + .0.dropped_frames)]
    Rejected(Box<ValidationReport>),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed episode file: {0}")]
    Format(String),
}

/// Reference to a visual frame kept outside the container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisualRef {
    pub path: String,
    pub sha256: [u8; 32],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeFrame {
    /// Capture time of the master visual frame.
    pub t: f64,
    pub skew: f64,
    /// `^W T_EE` per hand, right-handed.
    pub ee_poses: [RigidTransform; 2],
    /// `^{EE_i} T_{EE_{i-1}}` per hand; identity on the first frame.
    pub deltas: [RigidTransform; 2],
    pub grippers: [GripperState; 2],
    /// Left hand's two sensors, then the right hand's.
    pub clouds: [TactilePointCloud; 4],
    /// Corner reprojection RMS of each cloud's extrinsics, pixels.
    pub corner_rms: [f64; 4],
    pub visual: [VisualRef; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub session: String,
    pub software: String,
    pub calibration_hash: [u8; 32],
    /// Device id per hand.
    pub devices: [String; 2],
    /// Tactile stream id per cloud slot.
    pub tactile_streams: [String; 4],
    /// Frames in the pedal window that failed the skew limit.
    pub dropped_frames: u32,
    /// Frames dropped because a tactile reconstruction failed.
    pub failed_frames: u32,
    /// Frames whose gripper width was carried over from a neighbor.
    pub width_holds: u32,
    pub frames: Vec<EpisodeFrame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewStats {
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl SkewStats {
    fn of(skews: &[f64]) -> Self {
        if skews.is_empty() {
            return Self {
                median: 0.0,
                p95: 0.0,
                max: 0.0,
            };
        }
        let mut s = skews.to_vec();
        s.sort_by(f64::total_cmp);
        let at = |q: f64| s[((s.len() - 1) as f64 * q).round() as usize];
        Self {
            median: at(0.5),
            p95: at(0.95),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.to_string(),
            passed: value <= limit,
            value,
            limit,
        }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.to_string(),
            passed: value >= limit,
            value,
            limit,
        }
    }
}

/// Machine-readable outcome of every episode check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub frames: usize,
    pub dropped_frames: usize,
    pub failed_reconstructions: usize,
    pub width_holds: usize,
    pub skew: SkewStats,
    pub delta_chain_error: f64,
    pub max_corner_rms: f64,
    pub width_clamp_rate: f64,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn finish(mut self) -> Self {
        self.passed = self.checks.iter().all(|c| c.passed);
        self
    }
}

/// Largest deviation between each stored pose and the pose rebuilt from its
/// predecessor and delta.
pub fn delta_chain_error(frames: &[EpisodeFrame]) -> f64 {
    let mut err: f64 = 0.0;
    for (i, f) in frames.iter().enumerate() {
        for h in 0..2 {
            let d = if i == 0 {
                f.deltas[h].distance(&RigidTransform::identity(Handedness::Right))
            } else {
                match f.ee_poses[h].compose(&f.deltas[h]) {
                    Ok(prev) => prev.distance(&frames[i - 1].ee_poses[h]),
                    Err(_) => f64::INFINITY,
                }
            };
            err = err.max(if d.is_nan() { f64::INFINITY } else { d });
        }
    }
    err
}

/// Every invariant that can be checked on a stored episode.
pub fn validate_episode(ep: &Episode) -> ValidationReport {
    let frames = &ep.frames;
    let skews: Vec<f64> = frames.iter().map(|f| f.skew).collect();
    let skew = SkewStats::of(&skews);
    let chain = delta_chain_error(frames);
    let max_rms = frames
        .iter()
        .flat_map(|f| f.corner_rms)
        .fold(0.0, f64::max);
    let widths: Vec<&GripperState> = frames.iter().flat_map(|f| &f.grippers).collect();
    let clamp_rate = if widths.is_empty() {
        0.0
    } else {
        widths.iter().filter(|g| g.clamped).count() as f64 / widths.len() as f64
    };
    let width_out = widths
        .iter()
        .filter(|g| !(0.0..=MAX_GRIPPER_WIDTH).contains(&g.width))
        .count();
    let non_monotonic = frames.windows(2).filter(|w| w[1].t.partial_cmp(&w[0].t) != Some(std::cmp::Ordering::Greater)).count();
    let left_handed = frames
        .iter()
        .flat_map(|f| f.ee_poses.iter().chain(&f.deltas))
        .filter(|p| p.handedness() != Handedness::Right)
        .count();
    let bad_clouds = frames
        .iter()
        .flat_map(|f| &f.clouds)
        .filter(|c| c.points().len() != CLOUD_SIZE || c.points().iter().flatten().any(|v| !v.is_finite()))
        .count();
    let tactile_skew = frames
        .iter()
        .flat_map(|f| f.clouds.iter().map(move |c| (c.timestamp - f.t).abs()))
        .fold(0.0, f64::max);
    let total = frames.len() + ep.dropped_frames as usize + ep.failed_frames as usize;
    let valid_rate = if total == 0 { 0.0 } else { frames.len() as f64 / total as f64 };

    ValidationReport {
        passed: false,
        frames: frames.len(),
        dropped_frames: ep.dropped_frames as usize,
        failed_reconstructions: ep.failed_frames as usize,
        width_holds: ep.width_holds as usize,
        skew,
        delta_chain_error: chain,
        max_corner_rms: max_rms,
        width_clamp_rate: clamp_rate,
        checks: vec![
            Check::at_least("frame_count", frames.len() as f64, 2.0),
            Check::at_least("valid_rate", valid_rate, 1.0 - MAX_INVALID_FRACTION),
            Check::at_most("max_skew", skew.max, MAX_SKEW),
            Check::at_most("tactile_skew", tactile_skew, MAX_SKEW),
            Check::at_most("timestamps_non_increasing", non_monotonic as f64, 0.0),
            Check::at_most("delta_chain_error", chain, DELTA_CHAIN_TOLERANCE),
            Check::at_most("left_handed_poses", left_handed as f64, 0.0),
            Check::at_most("malformed_clouds", bad_clouds as f64, 0.0),
            Check::at_most("max_corner_rms", max_rms, MAX_CORNER_RMS),
            Check::at_most("widths_out_of_range", width_out as f64, 0.0),
        ],
    }
    .finish()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessConfig {
    /// Subtract per-stream latencies before matching.
    pub compensate: bool,
    /// Pedal press delimiting the episode; the whole recording when the
    /// recording has no pedal log.
    pub press: usize,
    pub recon: ReconConfig,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self {
            compensate: true,
            press: 0,
            recon: ReconConfig::default(),
        }
    }
}

fn to_right_handed(s: &PoseStream) -> Result<PoseStream, PipelineError> {
    let samples = s
        .samples()
        .iter()
        .map(|p| {
            let payload = match p.payload.handedness() {
                Handedness::Left => p.payload.lh_to_rh().map_err(|_| HandEyeError::HandednessMismatch)?,
                Handedness::Right => p.payload,
            };
            Ok(Sample {
                t_rec: p.t_rec,
                payload,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(Stream::new(s.id.clone(), samples)?)
}

struct FrameOutput {
    clouds: Vec<(TactilePointCloud, f64)>,
    visual: [(VisualRef, Option<GripperState>); 2],
}

fn load_frame(root: &std::path::Path, frame: &FrameRef) -> Result<(GrayImage, [u8; 32]), PipelineError> {
    let path = root.join(&frame.0);
    let bytes = std::fs::read(&path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .into_luma8();
    Ok((img, Sha256::digest(&bytes).into()))
}

/// Gripper opening seen in one action-camera frame, if both finger markers
/// are visible.
pub fn measure_gripper(
    img: &GrayImage,
    calib: &Calibration,
    stream: &str,
    device: &str,
) -> Result<Option<GripperState>, PipelineError> {
    let k = calib.intrinsics_for(stream)?;
    let g = calib.gripper_for(device)?;
    let dict = Dictionary::builtin(g.marker_size);
    let dets = detect_markers(img, &dict);
    let pose = |id: u32| {
        dets.iter()
            .find(|d| d.id == id)
            .and_then(|d| marker_pose_best(d, g.marker_size, k).ok())
    };
    Ok(match (pose(g.left_id), pose(g.right_id)) {
        (Some(l), Some(r)) => Some(gripper_width(&l, &r, g.zero_offset)),
        _ => None,
    })
}

fn process_frame(
    raw: &RawRecording,
    calib: &Calibration,
    config: &ProcessConfig,
    frame: &AlignedFrame,
    tactile_ids: &[String; 4],
    devices: &[String; 2],
) -> Result<FrameOutput, PipelineError> {
    let mut clouds = Vec::with_capacity(4);
    for (slot, id) in tactile_ids.iter().enumerate() {
        let (img, _) = load_frame(&raw.root, &frame.tactile[slot])?;
        let t = frame.tactile_t[slot];
        let geom = calib.sensor_for(id)?;
        let k = calib.intrinsics_for(id)?;
        let r = reconstruct_frame(&img, geom, k, &config.recon, id, t).map_err(|source| PipelineError::Tactile {
            stream: id.clone(),
            t,
            source,
        })?;
        clouds.push((r.cloud, r.corner_rms));
    }
    let visual = |hand: Hand| -> Result<(VisualRef, Option<GripperState>), PipelineError> {
        let fref = &frame.visual[hand.index()];
        let (img, sha256) = load_frame(&raw.root, fref)?;
        let state = measure_gripper(&img, calib, &camera_stream_id(hand, Camera::Visual), &devices[hand.index()])?;
        Ok((
            VisualRef {
                path: fref.0.clone(),
                sha256,
            },
            state,
        ))
    };
    Ok(FrameOutput {
        clouds,
        visual: [visual(Hand::Left)?, visual(Hand::Right)?],
    })
}

/// Runs the whole chain: handedness conversion, latency correction,
/// alignment, tactile reconstruction, end-effector poses, deltas and widths.
///
/// Skew-invalid frames and frames whose reconstruction fails are dropped;
/// the episode is rejected when more than 5% of its frames are lost.
pub fn process_episode(
    raw: &RawRecording,
    calib: &Calibration,
    config: &ProcessConfig,
) -> Result<(Episode, ValidationReport), PipelineError> {
    if raw.cameras[0][0].len() < 2 {
        return Err(PipelineError::TooFewFrames(raw.cameras[0][0].len()));
    }
    let devices = Hand::BOTH.map(|h| raw.meta.device(h).unwrap_or(h.name()).to_string());
    let xs = [calib.handeye_for(&devices[0])?.x, calib.handeye_for(&devices[1])?.x];
    let tactile_ids = [
        camera_stream_id(Hand::Left, Camera::Tactile0),
        camera_stream_id(Hand::Left, Camera::Tactile1),
        camera_stream_id(Hand::Right, Camera::Tactile0),
        camera_stream_id(Hand::Right, Camera::Tactile1),
    ];

    let input = AlignInput {
        visual: [raw.camera(Hand::Left, Camera::Visual).clone(), raw.camera(Hand::Right, Camera::Visual).clone()],
        tactile: [
            raw.camera(Hand::Left, Camera::Tactile0).clone(),
            raw.camera(Hand::Left, Camera::Tactile1).clone(),
            raw.camera(Hand::Right, Camera::Tactile0).clone(),
            raw.camera(Hand::Right, Camera::Tactile1).clone(),
        ],
        poses: [to_right_handed(&raw.poses[0])?, to_right_handed(&raw.poses[1])?],
    };
    let align = AlignConfig {
        compensate: config.compensate,
        ..AlignConfig::default()
    };
    let alignment = align_streams(&input, &calib.latency, &align)?;

    let window = if raw.pedal.is_empty() {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        *raw.pedal.get(config.press).ok_or(PipelineError::NoSuchPress(config.press))?
    };
    let candidates: Vec<&AlignedFrame> = alignment
        .frames
        .iter()
        .filter(|f| f.t >= window.0 && f.t <= window.1)
        .collect();
    let valid: Vec<&AlignedFrame> = candidates.iter().copied().filter(|f| f.valid).collect();
    let dropped = candidates.len() - valid.len();
    if candidates.len() < 2 {
        return Err(PipelineError::TooFewFrames(candidates.len()));
    }
    if dropped as f64 > MAX_INVALID_FRACTION * candidates.len() as f64 {
        let skews: Vec<f64> = candidates.iter().map(|f| f.skew).collect();
        let report = ValidationReport {
            passed: false,
            frames: valid.len(),
            dropped_frames: dropped,
            failed_reconstructions: 0,
            width_holds: 0,
            skew: SkewStats::of(&skews),
            delta_chain_error: 0.0,
            max_corner_rms: 0.0,
            width_clamp_rate: 0.0,
            checks: vec![Check::at_least(
                "valid_rate",
                valid.len() as f64 / candidates.len() as f64,
                1.0 - MAX_INVALID_FRACTION,
            )],
        };
        return Err(PipelineError::Rejected(Box::new(report)));
    }

    let outputs: Vec<Result<FrameOutput, PipelineError>> = valid
        .par_iter()
        .map(|f| process_frame(raw, calib, config, f, &tactile_ids, &devices))
        .collect();

    let mut kept: Vec<(&AlignedFrame, FrameOutput)> = Vec::with_capacity(valid.len());
    let mut failed = 0u32;
    for (f, out) in valid.iter().zip(outputs) {
        match out {
            Ok(o) => kept.push((f, o)),
            Err(PipelineError::Tactile { .. }) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if kept.len() < 2 {
        return Err(PipelineError::TooFewFrames(kept.len()));
    }

    // Missing marker sightings reuse the nearest earlier width, or the first
    // one seen for a leading gap.
    let mut holds = 0u32;
    let mut widths: Vec<[GripperState; 2]> = Vec::with_capacity(kept.len());
    let mut first = [None; 2];
    for hand in Hand::BOTH {
        first[hand.index()] = kept.iter().find_map(|(_, o)| o.visual[hand.index()].1);
        if first[hand.index()].is_none() {
            return Err(PipelineError::NoGripperMarkers(hand.name()));
        }
    }
    let mut last: [GripperState; 2] = [first[0].expect("checked"), first[1].expect("checked")];
    for (_, o) in &kept {
        for (w, (_, seen)) in last.iter_mut().zip(&o.visual) {
            match seen {
                Some(s) => *w = *s,
                None => holds += 1,
            }
        }
        widths.push(last);
    }

    let mut frames: Vec<EpisodeFrame> = Vec::with_capacity(kept.len());
    for ((f, o), grippers) in kept.into_iter().zip(widths) {
        let ee = [controller_to_ee(&f.poses[0], &xs[0])?, controller_to_ee(&f.poses[1], &xs[1])?];
        let deltas = match frames.last() {
            None => [RigidTransform::identity(Handedness::Right); 2],
            Some(prev) => [0, 1].map(|h| ee[h].inverse().compose(&prev.ee_poses[h]).expect("right-handed")),
        };
        let mut clouds = o.clouds.into_iter();
        let mut next = || clouds.next().expect("four clouds");
        let c = [next(), next(), next(), next()];
        let [v0, v1] = o.visual;
        frames.push(EpisodeFrame {
            t: f.t,
            skew: f.skew,
            ee_poses: ee,
            deltas,
            grippers,
            corner_rms: [c[0].1, c[1].1, c[2].1, c[3].1],
            clouds: c.map(|(cloud, _)| cloud),
            visual: [v0.0, v1.0],
        });
    }

    let episode = Episode {
        session: raw.meta.name.clone(),
        software: raw.meta.software.clone(),
        calibration_hash: calib.hash(),
        devices,
        tactile_streams: tactile_ids,
        dropped_frames: dropped as u32,
        failed_frames: failed,
        width_holds: holds,
        frames,
    };
    let report = validate_episode(&episode);
    Ok((episode, report))
}

/// Latency of every stream of a clock recording: cameras from the filmed
/// clock, trackers from their handshake logs.
pub fn measure_session_latencies(raw: &RawRecording) -> Result<LatencyTable, PipelineError> {
    let clock = raw
        .meta
        .clock
        .as_ref()
        .ok_or_else(|| PipelineError::Format("session.toml has no [clock] section".into()))?;
    let codebook = clock.codebook();
    let dict = Dictionary::builtin(clock.marker_size);
    let reader = ClockReader::new(&codebook, &dict);
    let source = DirectorySource {
        root: raw.root.clone(),
    };
    let mut table = LatencyTable::default();
    for hand in Hand::BOTH {
        for cam in Camera::ALL {
            table.insert(measure_camera_latency(raw.camera(hand, cam), &reader, &source)?);
        }
        let pose = &raw.poses[hand.index()];
        table.insert(measure_pose_latency(&pose.id, &raw.handshakes[hand.index()])?);
    }
    Ok(table)
}
