//! Oracle recordings on disk, each with a `ground_truth/` sidecar.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fiducial::{Dictionary, MarkerDescriptor};
use crate::geometry::{CameraIntrinsics, Handedness, RigidTransform};
use crate::handeye::HandEyeResult;
use crate::imaging::GrayImage;
use crate::session::{
    camera_dir, camera_stream_id, format_index, format_pairs, format_pedal, format_poses, hand_dir, Calibration,
    Camera, ClockSpec, GripperConfig, Hand, SessionMeta, GROUND_TRUTH_DIR, HANDSHAKE_FILE, INDEX_FILE, PEDAL_FILE,
    POSES_FILE, SESSION_FILE,
};
use crate::sync::LatencyRecord;

use super::clock::{clock_for, clock_ids, render_clock};
use super::handeye::{gen_handeye_set, random_ground_truth, HandEyeTruth, PoseNoise};
use super::marker::render_markers;
use super::sensor::{gen_deformation, render_tactile_image, DeformationParams, RenderConfig, SensorCamera, SensorDesign};
use super::streams::{frame_file, gen_pose_stream, sub_rng, ScenarioSpec, StreamTruth, SyntheticStreams};
use super::{visual_intrinsics, SynthError};

pub const TRUTH_FILE: &str = "truth.json";
pub const CALIBRATION_FILE: &str = "calibration.toml";
pub const PAIRS_FILE: &str = "pairs.txt";

pub fn software_version() -> String {
    concat!("bidemo ", env!("CARGO_PKG_VERSION")).to_string()
}

pub fn device_id(hand: Hand) -> String {
    format!("controller-{}", hand.name())
}

fn encode_png(img: &GrayImage) -> Vec<u8> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)
        .expect("in-memory png encoding");
    buf
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), SynthError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn session_meta(name: String, clock: Option<ClockSpec>) -> SessionMeta {
    SessionMeta {
        name,
        software: software_version(),
        devices: Hand::BOTH.iter().map(|h| (h.name().to_string(), device_id(*h))).collect(),
        clock,
    }
}

/// Pose logs, handshakes and camera indices common to every scenario.
fn write_streams(dir: &Path, streams: &SyntheticStreams) -> Result<(), SynthError> {
    for hand in Hand::BOTH {
        let h = hand.index();
        write(&dir.join(hand_dir(hand)).join(POSES_FILE), format_poses(streams.poses[h].samples()))?;
        write(&dir.join(hand_dir(hand)).join(HANDSHAKE_FILE), format_pairs(&streams.handshakes[h]))?;
        for cam in Camera::ALL {
            let entries: Vec<(String, f64)> = streams.cameras[h][cam as usize]
                .samples()
                .iter()
                .enumerate()
                .map(|(k, s)| (frame_file(k), s.t_rec))
                .collect();
            write(&dir.join(camera_dir(hand, cam)).join(INDEX_FILE), format_index(&entries))?;
        }
    }
    Ok(())
}

fn tactile_camera(seed: u64, hand: Hand, cam: Camera) -> SensorCamera {
    let tag = seed.wrapping_mul(8).wrapping_add(hand.index() as u64 * 2 + cam as u64);
    SensorCamera::perturbed(tag, 0.03, 4.0, 0.001, 0.02)
}

/// Camera intrinsics of every stream.
fn scenario_intrinsics(seed: u64) -> BTreeMap<String, CameraIntrinsics> {
    let mut out = BTreeMap::new();
    for hand in Hand::BOTH {
        out.insert(camera_stream_id(hand, Camera::Visual), visual_intrinsics());
        for cam in Camera::TACTILE {
            out.insert(camera_stream_id(hand, cam), tactile_camera(seed, hand, cam).k);
        }
    }
    out
}

/// Sidecar of a clock recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTruth {
    pub seed: u64,
    pub streams: StreamTruth,
    pub clock: ClockSpec,
}

/// Every camera films the clock; the pose trackers exchange handshakes.
/// Camera phases are forced to zero so captures fall on clock ticks.
pub fn write_latency_session(dir: &Path, spec: &ScenarioSpec) -> Result<LatencyTruth, SynthError> {
    let spec = ScenarioSpec {
        max_phase: 0.0,
        ..spec.clone()
    };
    let streams = gen_pose_stream(&spec);
    let clock = clock_for(&spec);
    let dict = Dictionary::builtin(clock.marker_size);
    let intrinsics = scenario_intrinsics(spec.seed);
    let ids = clock_ids(&streams, &clock);
    // One encoded image per camera and clock id.
    let needed: Vec<(String, u32)> = {
        let mut v: Vec<(String, u32)> = ids.values().cloned().collect();
        v.sort();
        v.dedup();
        v
    };
    let encoded: BTreeMap<(String, u32), Vec<u8>> = needed
        .par_iter()
        .map(|(stream, id)| {
            let img = render_clock(&clock, &dict, *id, &intrinsics[stream])?;
            Ok(((stream.clone(), *id), encode_png(&img)))
        })
        .collect::<Result<_, SynthError>>()?;
    for (frame, key) in &ids {
        write(&dir.join(&frame.0), &encoded[key])?;
    }
    write_streams(dir, &streams)?;
    let meta = session_meta(format!("synth-latency-{}", spec.seed), Some(clock.clone()));
    write(&dir.join(SESSION_FILE), toml::to_string(&meta).expect("meta serializes"))?;
    let truth = LatencyTruth {
        seed: spec.seed,
        streams: streams.truth,
        clock,
    };
    write(
        &dir.join(GROUND_TRUTH_DIR).join(TRUTH_FILE),
        serde_json::to_vec(&truth).expect("truth serializes"),
    )?;
    Ok(truth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeScenario {
    pub streams: ScenarioSpec,
    /// Gaussian noise on tactile images, gray levels.
    pub tactile_noise: f64,
    /// Largest inner-edge deflection, meters.
    pub max_deflection: f64,
    pub gripper: GripperConfig,
}

impl Default for EpisodeScenario {
    fn default() -> Self {
        Self {
            streams: ScenarioSpec::default(),
            tactile_noise: 0.0,
            max_deflection: 0.010,
            gripper: GripperConfig {
                left_id: 10,
                right_id: 11,
                marker_size: 0.02,
                zero_offset: 0.025,
            },
        }
    }
}

/// Sidecar of a demonstration recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTruth {
    pub seed: u64,
    pub streams: StreamTruth,
    /// `^Q T_EE` per device.
    pub handeye: BTreeMap<String, RigidTransform>,
    /// Gripper opening per hand at each of that hand's visual frames.
    pub widths: BTreeMap<String, Vec<f64>>,
    /// `^W T_EE` per hand at each left visual capture time.
    pub ee_poses: BTreeMap<String, Vec<RigidTransform>>,
    /// Camera-from-CAD pose per tactile stream.
    pub tactile_extrinsics: BTreeMap<String, RigidTransform>,
    /// `[left, right]` face deflection per tactile frame.
    pub deflections: BTreeMap<String, Vec<[f64; 2]>>,
    /// Deformed inner edges (CAD frame) per tactile frame.
    pub edges: BTreeMap<String, Vec<[Vec<[f64; 3]>; 2]>>,
}

/// Smooth periodic schedule `lo + (hi - lo) · (1 - cos(2π f t + φ)) / 2`.
#[derive(Debug, Clone, Copy)]
struct Wave {
    lo: f64,
    hi: f64,
    freq: f64,
    phase: f64,
}

impl Wave {
    fn random(rng: &mut impl Rng, lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            freq: rng.random_range(0.3..0.8),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    fn at(&self, t: f64) -> f64 {
        let s = 0.5 * (1.0 - (std::f64::consts::TAU * self.freq * t + self.phase).cos());
        self.lo + (self.hi - self.lo) * s
    }
}

/// Camera-from-marker poses of the two finger markers at opening `width`.
pub fn finger_marker_poses(width: f64, gripper: &GripperConfig) -> [RigidTransform; 2] {
    let half = (width + gripper.zero_offset) / 2.0;
    let tilt = UnitQuaternion::from_scaled_axis(Vector3::new(-0.15, 0.0, 0.0));
    [-half, half].map(|x| RigidTransform::new(tilt, Vector3::new(x, 0.025, 0.13), Handedness::Right))
}

/// Action-camera view of the gripper fingers.
pub fn render_gripper(width: f64, gripper: &GripperConfig, dict: &Dictionary) -> Result<GrayImage, SynthError> {
    let poses = finger_marker_poses(width, gripper);
    let desc = |id: u32| -> Result<MarkerDescriptor, SynthError> {
        let d = dict
            .get(id)
            .ok_or_else(|| SynthError::Invalid(format!("marker id {id} not in dictionary")))?;
        Ok(MarkerDescriptor {
            physical_size: gripper.marker_size,
            ..*d
        })
    };
    let markers = [(desc(gripper.left_id)?, poses[0]), (desc(gripper.right_id)?, poses[1])];
    Ok(render_markers(&markers, &visual_intrinsics())?.0)
}

/// A complete demonstration recording plus its ground truth and the true
/// calibration file.
pub fn write_episode_session(dir: &Path, scenario: &EpisodeScenario) -> Result<EpisodeTruth, SynthError> {
    let spec = &scenario.streams;
    let seed = spec.seed;
    let streams = gen_pose_stream(spec);
    let design = SensorDesign::default();
    let dict = Dictionary::builtin(scenario.gripper.marker_size);
    let mut wave_rng = sub_rng(seed, 20);

    let mut truth = EpisodeTruth {
        seed,
        streams: streams.truth.clone(),
        handeye: BTreeMap::new(),
        widths: BTreeMap::new(),
        ee_poses: BTreeMap::new(),
        tactile_extrinsics: BTreeMap::new(),
        deflections: BTreeMap::new(),
        edges: BTreeMap::new(),
    };
    let mut calibration = Calibration::default();
    for (id, lat) in &streams.truth.latencies {
        calibration.latency.insert(LatencyRecord::fixed(id.clone(), *lat));
    }
    calibration.intrinsics = scenario_intrinsics(seed);

    // Render jobs: (frame path, image producer) per camera frame.
    enum Job {
        Visual(f64),
        Tactile(SensorCamera, [f64; 2], u64),
    }
    let mut jobs: Vec<(String, Job)> = Vec::new();
    let t_master = &streams.truth.timelines[&camera_stream_id(Hand::Left, Camera::Visual)].capture;
    for hand in Hand::BOTH {
        let device = device_id(hand);
        let (x, y) = random_ground_truth(seed.wrapping_add(hand.index() as u64 * 1000));
        truth.handeye.insert(device.clone(), x);
        calibration.handeye.insert(
            device.clone(),
            HandEyeResult {
                x,
                y,
                residual_rot: 0.0,
                residual_trans: 0.0,
            },
        );
        calibration.gripper.insert(device, scenario.gripper);
        let path = &streams.trajectories[hand.index()];
        truth.ee_poses.insert(
            hand.name().to_string(),
            t_master.iter().map(|t| path.at(*t).compose(&x).expect("right-handed")).collect(),
        );

        let width = Wave::random(&mut wave_rng, 0.005, 0.075);
        let vid = camera_stream_id(hand, Camera::Visual);
        let times = &streams.truth.timelines[&vid].capture;
        let widths: Vec<f64> = times.iter().map(|t| width.at(t - spec.start)).collect();
        for (k, w) in widths.iter().enumerate() {
            jobs.push((streams.cameras[hand.index()][0].samples()[k].payload.0.clone(), Job::Visual(*w)));
        }
        truth.widths.insert(hand.name().to_string(), widths);

        for cam in Camera::TACTILE {
            let id = camera_stream_id(hand, cam);
            let sensor = tactile_camera(seed, hand, cam);
            calibration.sensor.insert(id.clone(), design.geometry());
            truth.tactile_extrinsics.insert(id.clone(), sensor.extrinsics);
            let waves = [
                Wave::random(&mut wave_rng, 0.0, scenario.max_deflection),
                Wave::random(&mut wave_rng, 0.0, scenario.max_deflection),
            ];
            let times = &streams.truth.timelines[&id].capture;
            let defl: Vec<[f64; 2]> = times
                .iter()
                .map(|t| [waves[0].at(t - spec.start), waves[1].at(t - spec.start)])
                .collect();
            for (k, d) in defl.iter().enumerate() {
                let noise_seed = sub_rng(seed, 30 + jobs.len() as u64).random();
                let frame = streams.cameras[hand.index()][cam as usize].samples()[k].payload.0.clone();
                jobs.push((frame, Job::Tactile(sensor, *d, noise_seed)));
            }
            truth.edges.insert(
                id.clone(),
                defl.iter()
                    .map(|d| {
                        gen_deformation(&design, &DeformationParams::quadratic(d[0], d[1]))
                            .map(|e| e.iter().map(|p| [p.x, p.y, p.z]).collect())
                    })
                    .collect(),
            );
            truth.deflections.insert(id, defl);
        }
    }

    let rendered: Vec<(String, Vec<u8>)> = jobs
        .par_iter()
        .map(|(path, job)| {
            let img = match job {
                Job::Visual(w) => render_gripper(*w, &scenario.gripper, &dict)?,
                Job::Tactile(cam, d, noise_seed) => {
                    let edges = gen_deformation(&design, &DeformationParams::quadratic(d[0], d[1]));
                    let cfg = RenderConfig {
                        noise_sigma: scenario.tactile_noise,
                        seed: *noise_seed,
                        ..RenderConfig::default()
                    };
                    render_tactile_image(&edges, &design, cam, &cfg)?.image
                }
            };
            Ok((path.clone(), encode_png(&img)))
        })
        .collect::<Result<_, SynthError>>()?;
    for (path, bytes) in &rendered {
        write(&dir.join(path), bytes)?;
    }

    write_streams(dir, &streams)?;
    let meta = session_meta(format!("synth-episode-{seed}"), None);
    write(&dir.join(SESSION_FILE), toml::to_string(&meta).expect("meta serializes"))?;
    let stop = spec.start + spec.duration;
    write(&dir.join(PEDAL_FILE), format_pedal(&[(spec.start - 0.01, stop)]))?;
    let gt = dir.join(GROUND_TRUTH_DIR);
    write(&gt.join(CALIBRATION_FILE), calibration.to_toml())?;
    write(&gt.join(TRUTH_FILE), serde_json::to_vec(&truth).expect("truth serializes"))?;
    Ok(truth)
}

/// A pose-pair log for `calibrate-handeye` plus the true transforms.
pub fn write_handeye_set(dir: &Path, n: usize, noise: PoseNoise, seed: u64) -> Result<HandEyeTruth, SynthError> {
    let (x, y) = random_ground_truth(seed);
    let (set, truth) = gen_handeye_set(&x, &y, n, noise, seed);
    write(&dir.join(PAIRS_FILE), set.to_text())?;
    write(
        &dir.join(GROUND_TRUTH_DIR).join(TRUTH_FILE),
        serde_json::to_vec(&truth).expect("truth serializes"),
    )?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiducial::{detect_markers, marker_pose_best};
    use crate::handeye::gripper_width;

    #[test]
    fn finger_markers_measure_the_width() {
        let g = EpisodeScenario::default().gripper;
        let dict = Dictionary::builtin(g.marker_size);
        for w in [0.005, 0.04, 0.075] {
            let img = render_gripper(w, &g, &dict).unwrap();
            let dets = detect_markers(&img, &dict);
            let pose = |id: u32| {
                let d = dets.iter().find(|d| d.id == id).expect("marker found");
                marker_pose_best(d, g.marker_size, &visual_intrinsics()).unwrap()
            };
            let s = gripper_width(&pose(g.left_id), &pose(g.right_id), g.zero_offset);
            assert!((s.width - w).abs() < 0.001, "{} vs {w}", s.width);
        }
    }
}
