//! Raw recording layout and the calibration file.
//!
//! ```text
//! session.toml
//! pedal.log                            start <t> / stop <t>
//! hands/{left,right}/poses.log         t_rec tx ty tz qx qy qz qw (left-handed)
//! hands/{left,right}/handshake.log     t_actual t_rec (optional)
//! hands/{left,right}/{visual,tactile0,tactile1}/index.txt   <file> <t_rec>
//! ```
//!
//! All times are seconds on the host clock. Floats are written in Rust's
//! shortest round-trip form, so every text file reads back bit-exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fiducial::ClockCodebook;
use crate::geometry::{CameraIntrinsics, Handedness, RigidTransform};
use crate::handeye::HandEyeResult;
use crate::sync::{FrameRef, FrameStream, LatencyTable, PoseStream, Sample, Stream};
use crate::tactile::SensorGeometry;

pub const SESSION_FILE: &str = "session.toml";
pub const PEDAL_FILE: &str = "pedal.log";
pub const INDEX_FILE: &str = "index.txt";
pub const POSES_FILE: &str = "poses.log";
pub const HANDSHAKE_FILE: &str = "handshake.log";
pub const GROUND_TRUTH_DIR: &str = "ground_truth";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("{0} is empty or missing")]
    EmptyRecording(PathBuf),
    #[error("missing stream `{0}`")]
    MissingStream(String),
    #[error("{file}:{line}: {message}")]
    SchemaViolation {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SessionError {
    SessionError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Left, Hand::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Hand::Left => "left",
            Hand::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Camera {
    Visual,
    Tactile0,
    Tactile1,
}

impl Camera {
    pub const ALL: [Camera; 3] = [Camera::Visual, Camera::Tactile0, Camera::Tactile1];
    pub const TACTILE: [Camera; 2] = [Camera::Tactile0, Camera::Tactile1];

    pub fn name(self) -> &'static str {
        match self {
            Camera::Visual => "visual",
            Camera::Tactile0 => "tactile0",
            Camera::Tactile1 => "tactile1",
        }
    }
}

pub fn camera_stream_id(hand: Hand, cam: Camera) -> String {
    format!("{}/{}", hand.name(), cam.name())
}

pub fn pose_stream_id(hand: Hand) -> String {
    format!("{}/pose", hand.name())
}

pub fn hand_dir(hand: Hand) -> PathBuf {
    Path::new("hands").join(hand.name())
}

pub fn camera_dir(hand: Hand, cam: Camera) -> PathBuf {
    hand_dir(hand).join(cam.name())
}

/// The on-screen clock used for camera latency measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockSpec {
    /// Display time of the first id.
    pub start: f64,
    /// Seconds each id stays on screen.
    pub interval: f64,
    pub ids: Vec<u32>,
    /// Marker side length, meters.
    pub marker_size: f64,
}

impl ClockSpec {
    pub fn codebook(&self) -> ClockCodebook {
        ClockCodebook::cycle(&self.ids, self.start, self.interval)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub name: String,
    pub software: String,
    /// Device id per hand name.
    pub devices: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock: Option<ClockSpec>,
}

impl SessionMeta {
    pub fn device(&self, hand: Hand) -> Option<&str> {
        self.devices.get(hand.name()).map(String::as_str)
    }
}

/// A recording as found on disk. Images stay on disk; streams hold
/// references relative to `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub root: PathBuf,
    pub meta: SessionMeta,
    /// `[hand][camera]` in [`Hand::BOTH`] × [`Camera::ALL`] order.
    pub cameras: [[FrameStream; 3]; 2],
    /// Left-handed, as the tracker reports them.
    pub poses: [PoseStream; 2],
    /// `(start, stop)` pedal presses.
    pub pedal: Vec<(f64, f64)>,
    /// `(t_actual, t_rec)` per hand; empty when not recorded.
    pub handshakes: [Vec<(f64, f64)>; 2],
}

impl RawRecording {
    pub fn camera(&self, hand: Hand, cam: Camera) -> &FrameStream {
        &self.cameras[hand.index()][cam as usize]
    }
}

pub fn ingest_recording(root: &Path) -> Result<RawRecording, SessionError> {
    let empty = std::fs::read_dir(root).map_or(true, |mut d| d.next().is_none());
    if empty {
        return Err(SessionError::EmptyRecording(root.to_path_buf()));
    }
    let meta_path = root.join(SESSION_FILE);
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: SessionMeta = toml::from_str(&meta_text).map_err(|e| SessionError::SchemaViolation {
        file: meta_path.clone(),
        line: e.span().map_or(0, |s| meta_text[..s.start].lines().count().max(1)),
        message: e.message().to_string(),
    })?;

    let camera = |hand: Hand, cam: Camera| -> Result<FrameStream, SessionError> {
        let id = camera_stream_id(hand, cam);
        let dir = camera_dir(hand, cam);
        let path = root.join(&dir).join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|_| SessionError::MissingStream(id.clone()))?;
        let entries = parse_index(&text).map_err(|(line, message)| SessionError::SchemaViolation {
            file: path.clone(),
            line,
            message,
        })?;
        let mut samples = Vec::with_capacity(entries.len());
        for (i, (file, t)) in entries.into_iter().enumerate() {
            let rel = dir.join(&file);
            if !root.join(&rel).is_file() {
                return Err(SessionError::SchemaViolation {
                    file: path.clone(),
                    line: i + 1,
                    message: format!("frame {file} does not exist"),
                });
            }
            samples.push(Sample {
                t_rec: t,
                payload: FrameRef(rel.to_string_lossy().replace('\\', "/")),
            });
        }
        Stream::new(id, samples).map_err(|e| SessionError::SchemaViolation {
            file: path.clone(),
            line: 0,
            message: e.to_string(),
        })
    };
    let hand_streams = |hand: Hand| -> Result<[FrameStream; 3], SessionError> {
        Ok([camera(hand, Camera::Visual)?, camera(hand, Camera::Tactile0)?, camera(hand, Camera::Tactile1)?])
    };
    let cameras = [hand_streams(Hand::Left)?, hand_streams(Hand::Right)?];

    let poses = |hand: Hand| -> Result<PoseStream, SessionError> {
        let id = pose_stream_id(hand);
        let path = root.join(hand_dir(hand)).join(POSES_FILE);
        let text = std::fs::read_to_string(&path).map_err(|_| SessionError::MissingStream(id.clone()))?;
        let schema = |(line, message)| SessionError::SchemaViolation {
            file: path.clone(),
            line,
            message,
        };
        let samples = parse_poses(&text).map_err(schema)?;
        Stream::new(id, samples).map_err(|e| schema((0, e.to_string())))
    };
    let poses = [poses(Hand::Left)?, poses(Hand::Right)?];

    let pedal_path = root.join(PEDAL_FILE);
    let pedal = match std::fs::read_to_string(&pedal_path) {
        Ok(text) => parse_pedal(&text).map_err(|(line, message)| SessionError::SchemaViolation {
            file: pedal_path.clone(),
            line,
            message,
        })?,
        Err(_) => Vec::new(),
    };
    let handshake = |hand: Hand| -> Result<Vec<(f64, f64)>, SessionError> {
        let path = root.join(hand_dir(hand)).join(HANDSHAKE_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => parse_pairs(&text).map_err(|(line, message)| SessionError::SchemaViolation {
                file: path.clone(),
                line,
                message,
            }),
            Err(_) => Ok(Vec::new()),
        }
    };
    let handshakes = [handshake(Hand::Left)?, handshake(Hand::Right)?];
    Ok(RawRecording {
        root: root.to_path_buf(),
        meta,
        cameras,
        poses,
        pedal,
        handshakes,
    })
}

type ParseResult<T> = Result<T, (usize, String)>;

/// Non-comment lines split into fields, with 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

fn num(line: usize, s: &str) -> ParseResult<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| (line, format!("`{s}` is not a finite number")))
}

pub fn parse_index(text: &str) -> ParseResult<Vec<(String, f64)>> {
    records(text)
        .map(|(line, f)| match f.as_slice() {
            [file, t] => Ok((file.to_string(), num(line, t)?)),
            _ => Err((line, format!("expected `<file> <t_rec>`, found {} fields", f.len()))),
        })
        .collect()
}

pub fn format_index(entries: &[(String, f64)]) -> String {
    let mut s = String::from("# frame t_rec\n");
    for (file, t) in entries {
        let _ = writeln!(s, "{file} {t}");
    }
    s
}

pub fn parse_poses(text: &str) -> ParseResult<Vec<Sample<RigidTransform>>> {
    records(text)
        .map(|(line, f)| {
            if f.len() != 8 {
                return Err((line, format!("expected 8 fields, found {}", f.len())));
            }
            let v: Vec<f64> = f.iter().map(|s| num(line, s)).collect::<Result<_, _>>()?;
            let pose = RigidTransform::from_xyzw([v[4], v[5], v[6], v[7]], [v[1], v[2], v[3]], Handedness::Left)
                .map_err(|e| (line, e.to_string()))?;
            Ok(Sample {
                t_rec: v[0],
                payload: pose,
            })
        })
        .collect()
}

pub fn format_poses(samples: &[Sample<RigidTransform>]) -> String {
    let mut s = String::from("# t_rec tx ty tz qx qy qz qw\n");
    for smp in samples {
        let [tx, ty, tz] = smp.payload.translation_array();
        let [qx, qy, qz, qw] = smp.payload.quaternion_xyzw();
        let _ = writeln!(s, "{} {tx} {ty} {tz} {qx} {qy} {qz} {qw}", smp.t_rec);
    }
    s
}

pub fn parse_pedal(text: &str) -> ParseResult<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut open: Option<f64> = None;
    let mut last = f64::NEG_INFINITY;
    let mut last_line = 0;
    for (line, f) in records(text) {
        last_line = line;
        let (kind, t) = match f.as_slice() {
            [k, t] => (*k, num(line, t)?),
            _ => return Err((line, "expected `start <t>` or `stop <t>`".into())),
        };
        if t < last {
            return Err((line, "pedal events go back in time".into()));
        }
        last = t;
        match (kind, open) {
            ("start", None) => open = Some(t),
            ("stop", Some(s)) => {
                out.push((s, t));
                open = None;
            }
            ("start", Some(_)) => return Err((line, "start without stop".into())),
            ("stop", None) => return Err((line, "stop without start".into())),
            _ => return Err((line, format!("unknown event `{kind}`"))),
        }
    }
    if open.is_some() {
        return Err((last_line, "recording ends with the pedal pressed".into()));
    }
    Ok(out)
}

pub fn format_pedal(presses: &[(f64, f64)]) -> String {
    let mut s = String::new();
    for (a, b) in presses {
        let _ = writeln!(s, "start {a}\nstop {b}");
    }
    s
}

pub fn parse_pairs(text: &str) -> ParseResult<Vec<(f64, f64)>> {
    records(text)
        .map(|(line, f)| match f.as_slice() {
            [a, b] => Ok((num(line, a)?, num(line, b)?)),
            _ => Err((line, "expected `<t_actual> <t_rec>`".into())),
        })
        .collect()
}

pub fn format_pairs(pairs: &[(f64, f64)]) -> String {
    let mut s = String::from("# t_actual t_rec\n");
    for (a, b) in pairs {
        let _ = writeln!(s, "{a} {b}");
    }
    s
}

/// Marker layout of a gripper's finger markers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperConfig {
    /// Dictionary ids of the markers on the left and right finger.
    pub left_id: u32,
    pub right_id: u32,
    /// Marker side length, meters.
    pub marker_size: f64,
    /// Marker origin distance when the gripper is closed, meters.
    pub zero_offset: f64,
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("malformed calibration: {0}")]
    Parse(String),
    #[error("calibration has no {section} entry for `{key}`")]
    Missing { section: &'static str, key: String },
}

/// Everything the pipeline needs to know about the devices. Cameras and
/// sensors are keyed by stream id, hand-eye and gripper entries by device id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(default)]
    pub latency: LatencyTable,
    #[serde(default)]
    pub intrinsics: BTreeMap<String, CameraIntrinsics>,
    #[serde(default)]
    pub sensor: BTreeMap<String, SensorGeometry>,
    #[serde(default)]
    pub handeye: BTreeMap<String, HandEyeResult>,
    #[serde(default)]
    pub gripper: BTreeMap<String, GripperConfig>,
}

impl Calibration {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("calibration serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, CalibrationError> {
        toml::from_str(text).map_err(|e| CalibrationError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let text = std::fs::read_to_string(path).map_err(|e| CalibrationError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    /// Loads `path` if it exists, otherwise starts empty.
    pub fn load_or_default(path: &Path) -> Result<Self, CalibrationError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        std::fs::write(path, self.to_toml()).map_err(|e| CalibrationError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }

    pub fn intrinsics_for(&self, stream: &str) -> Result<&CameraIntrinsics, CalibrationError> {
        self.intrinsics.get(stream).ok_or_else(|| CalibrationError::Missing {
            section: "intrinsics",
            key: stream.to_string(),
        })
    }

    pub fn sensor_for(&self, stream: &str) -> Result<&SensorGeometry, CalibrationError> {
        self.sensor.get(stream).ok_or_else(|| CalibrationError::Missing {
            section: "sensor",
            key: stream.to_string(),
        })
    }

    pub fn handeye_for(&self, device: &str) -> Result<&HandEyeResult, CalibrationError> {
        self.handeye.get(device).ok_or_else(|| CalibrationError::Missing {
            section: "handeye",
            key: device.to_string(),
        })
    }

    pub fn gripper_for(&self, device: &str) -> Result<&GripperConfig, CalibrationError> {
        self.gripper.get(device).ok_or_else(|| CalibrationError::Missing {
            section: "gripper",
            key: device.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sync::LatencyRecord;
    use nalgebra::{UnitQuaternion, Vector3};

    #[test]
    fn text_formats_round_trip_exactly() {
        let idx = vec![("000001.png".to_string(), 100.1 + 1.0 / 3.0), ("000002.png".to_string(), 1e-7)];
        assert_eq!(parse_index(&format_index(&idx)).unwrap(), idx);
        let pose = RigidTransform::new(
            UnitQuaternion::from_scaled_axis(Vector3::new(0.1, -0.7, 0.3)),
            Vector3::new(0.1, 1.0 / 7.0, -2.5),
            Handedness::Left,
        );
        let s = vec![Sample { t_rec: 3.0 / 7.0, payload: pose }];
        assert_eq!(parse_poses(&format_poses(&s)).unwrap(), s);
        let pedal = vec![(1.5, 2.25), (3.0, 9.0)];
        assert_eq!(parse_pedal(&format_pedal(&pedal)).unwrap(), pedal);
        let pairs = vec![(0.1, 0.2), (0.3, 0.41)];
        assert_eq!(parse_pairs(&format_pairs(&pairs)).unwrap(), pairs);
    }

    #[test]
    fn malformed_lines_report_their_line() {
        assert_eq!(parse_index("# header\na.png 1.0\nb.png\n").unwrap_err().0, 3);
        assert_eq!(parse_poses("1 2 3").unwrap_err().0, 1);
        assert_eq!(parse_pedal("start 1\nstart 2\n").unwrap_err().0, 2);
        assert_eq!(parse_pedal("stop 1\n").unwrap_err().0, 1);
        assert!(parse_pedal("start 1\n").is_err());
        assert_eq!(parse_pedal("start 5\nstop 1\n").unwrap_err().0, 2);
    }

    #[test]
    fn empty_directory_is_empty_recording() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ingest_recording(dir.path()), Err(SessionError::EmptyRecording(_))));
        assert!(matches!(
            ingest_recording(&dir.path().join("nope")),
            Err(SessionError::EmptyRecording(_))
        ));
    }

    #[test]
    fn calibration_round_trip() {
        let mut cal = Calibration::default();
        cal.latency.insert(LatencyRecord {
            stream_id: "left/visual".into(),
            t_latency: 0.14,
            sample_count: 30,
            spread: 0.001,
        });
        cal.intrinsics.insert(
            "left/visual".into(),
            CameraIntrinsics::new(260.0, 261.5, 160.0, 120.0, 320, 240).unwrap(),
        );
        cal.sensor.insert("left/tactile0".into(), crate::synth::sensor::SensorDesign::default().geometry());
        let p = RigidTransform::new(
            UnitQuaternion::from_scaled_axis(Vector3::new(0.3, 0.2, 0.1)),
            Vector3::new(0.01, 0.02, 1.0 / 3.0),
            Handedness::Right,
        );
        cal.handeye.insert(
            "dev".into(),
            HandEyeResult {
                x: p,
                y: p.inverse(),
                residual_rot: 0.01,
                residual_trans: 1e-4,
            },
        );
        cal.gripper.insert(
            "dev".into(),
            GripperConfig {
                left_id: 10,
                right_id: 11,
                marker_size: 0.02,
                zero_offset: 0.025,
            },
        );
        let back = Calibration::from_toml(&cal.to_toml()).unwrap();
        assert_eq!(back, cal);
        assert_eq!(back.hash(), cal.hash());
        assert!(matches!(back.handeye_for("other"), Err(CalibrationError::Missing { .. })));
    }
}
