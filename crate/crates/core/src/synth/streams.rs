//! Multi-rate camera and pose streams with injected latencies.

use std::collections::BTreeMap;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Handedness, RigidTransform};
use crate::session::{camera_dir, camera_stream_id, pose_stream_id, Camera, Hand};
use crate::sync::{FrameRef, FrameStream, PoseStream, Sample, Stream};

/// Per-modality transmission delays, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamLatencies {
    pub visual: f64,
    pub tactile: f64,
    pub pose: f64,
}

impl StreamLatencies {
    /// Action camera, tactile cameras, tracked controller.
    pub const TYPICAL: StreamLatencies = StreamLatencies {
        visual: 0.14,
        tactile: 0.08,
        pose: 0.01,
    };
    pub const ZERO: StreamLatencies = StreamLatencies {
        visual: 0.0,
        tactile: 0.0,
        pose: 0.0,
    };

    pub fn camera(&self, cam: Camera) -> f64 {
        match cam {
            Camera::Visual => self.visual,
            Camera::Tactile0 | Camera::Tactile1 => self.tactile,
        }
    }
}

/// Random controller motion through waypoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    /// Seconds between waypoints.
    pub waypoint_interval: f64,
    /// Waypoint translation offsets from the home pose, ± meters per axis.
    pub translation_range: f64,
    /// Waypoint rotation offsets, ± radians per axis.
    pub rotation_range: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            waypoint_interval: 0.5,
            translation_range: 0.08,
            rotation_range: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// Seconds of camera capture.
    pub duration: f64,
    /// Visual and tactile frame rate, Hz.
    pub camera_rate: f64,
    pub pose_rate: f64,
    pub latencies: StreamLatencies,
    /// Reception jitter, uniform in ± this many seconds.
    pub jitter: f64,
    /// Capture phase of each camera relative to the left visual camera,
    /// uniform in ± this many seconds.
    pub max_phase: f64,
    /// Host time of the first left visual capture.
    pub start: f64,
    /// Handshake exchanges per pose stream.
    pub handshakes: usize,
    pub trajectory: TrajectorySpec,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            duration: 1.5,
            camera_rate: 30.0,
            pose_rate: 72.0,
            latencies: StreamLatencies::TYPICAL,
            jitter: 0.0,
            max_phase: 0.004,
            start: 100.0,
            handshakes: 100,
            trajectory: TrajectorySpec::default(),
            seed: 0,
        }
    }
}

/// Independent random stream `tag` derived from a scenario seed.
pub fn sub_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Piecewise slerp/lerp path through timed waypoints, held constant past
/// its ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    poses: Vec<RigidTransform>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, poses: Vec<RigidTransform>) -> Self {
        assert!(!times.is_empty() && times.len() == poses.len());
        Self { times, poses }
    }

    /// Waypoints around `home` every `spec.waypoint_interval` over `[t0, t1]`.
    pub fn random(rng: &mut impl Rng, home: &RigidTransform, t0: f64, t1: f64, spec: &TrajectorySpec) -> Self {
        let n = ((t1 - t0) / spec.waypoint_interval).ceil() as usize + 1;
        let mut times = Vec::with_capacity(n);
        let mut poses = Vec::with_capacity(n);
        for i in 0..n {
            let tr = spec.translation_range;
            let rr = spec.rotation_range;
            let dt = Vector3::from_fn(|_, _| rng.random_range(-tr..=tr));
            let dw = Vector3::from_fn(|_, _| rng.random_range(-rr..=rr));
            let offset = RigidTransform::new(UnitQuaternion::from_scaled_axis(dw), dt, home.handedness());
            times.push(t0 + i as f64 * spec.waypoint_interval);
            poses.push(home.compose(&offset).expect("same handedness"));
        }
        Self { times, poses }
    }

    pub fn at(&self, t: f64) -> RigidTransform {
        let i = self.times.partition_point(|x| *x <= t);
        if i == 0 {
            return self.poses[0];
        }
        if i == self.times.len() {
            return self.poses[i - 1];
        }
        let (a, b) = (self.times[i - 1], self.times[i]);
        self.poses[i - 1]
            .interpolate(&self.poses[i], (t - a) / (b - a))
            .expect("same handedness")
    }
}

/// Capture and reception times of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub capture: Vec<f64>,
    pub rec: Vec<f64>,
}

impl Timeline {
    /// `n` captures every `1 / rate` from `t0`, received `latency` later
    /// with uniform jitter. Deliveries stay in order, as on a FIFO link.
    pub fn regular(rng: &mut impl Rng, t0: f64, rate: f64, n: usize, latency: f64, jitter: f64) -> Self {
        let capture: Vec<f64> = (0..n).map(|k| t0 + k as f64 / rate).collect();
        let mut rec = Vec::with_capacity(n);
        let mut last = f64::NEG_INFINITY;
        for t in &capture {
            let j = if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
            last = (t + latency + j).max(last);
            rec.push(last);
        }
        Self { capture, rec }
    }
}

/// Ground truth of a stream set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamTruth {
    pub latencies: BTreeMap<String, f64>,
    pub timelines: BTreeMap<String, Timeline>,
}

/// Six camera streams, two left-handed pose streams and the handshake logs.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStreams {
    /// `[hand][camera]`; references follow the recording layout.
    pub cameras: [[FrameStream; 3]; 2],
    pub poses: [PoseStream; 2],
    pub handshakes: [Vec<(f64, f64)>; 2],
    /// Right-handed controller paths in the tracking world.
    pub trajectories: [Trajectory; 2],
    pub truth: StreamTruth,
}

/// Home pose of each controller in the tracking world.
pub fn controller_home(hand: Hand) -> RigidTransform {
    let x = match hand {
        Hand::Left => -0.25,
        Hand::Right => 0.25,
    };
    RigidTransform::from_translation(Vector3::new(x, 1.0, 0.4), Handedness::Right)
}

pub fn frame_file(k: usize) -> String {
    format!("{k:06}.png")
}

pub fn frame_ref(hand: Hand, cam: Camera, k: usize) -> FrameRef {
    FrameRef(camera_dir(hand, cam).join(frame_file(k)).to_string_lossy().replace('\\', "/"))
}

/// Pose and camera streams of both hands.
///
/// The left visual camera captures at `start + k / camera_rate`; every other
/// camera is offset by a random phase within `max_phase`. Poses cover an
/// extra half second on either side so interpolation never runs out.
pub fn gen_pose_stream(spec: &ScenarioSpec) -> SyntheticStreams {
    let mut phase_rng = sub_rng(spec.seed, 1);
    let mut jitter_rng = sub_rng(spec.seed, 2);
    let mut path_rng = sub_rng(spec.seed, 3);
    let n = (spec.duration * spec.camera_rate).round() as usize;
    let mut truth = StreamTruth {
        latencies: BTreeMap::new(),
        timelines: BTreeMap::new(),
    };
    let mut cameras: Vec<Vec<FrameStream>> = Vec::new();
    for hand in Hand::BOTH {
        let mut row = Vec::new();
        for cam in Camera::ALL {
            let id = camera_stream_id(hand, cam);
            let phase = if hand == Hand::Left && cam == Camera::Visual || spec.max_phase == 0.0 {
                0.0
            } else {
                phase_rng.random_range(-spec.max_phase..=spec.max_phase)
            };
            let lat = spec.latencies.camera(cam);
            let tl = Timeline::regular(&mut jitter_rng, spec.start + phase, spec.camera_rate, n, lat, spec.jitter);
            let samples = tl
                .rec
                .iter()
                .enumerate()
                .map(|(k, t)| Sample {
                    t_rec: *t,
                    payload: frame_ref(hand, cam, k),
                })
                .collect();
            row.push(Stream::new(id.clone(), samples).expect("ordered"));
            truth.latencies.insert(id.clone(), lat);
            truth.timelines.insert(id, tl);
        }
        cameras.push(row);
    }

    let t0 = spec.start - 0.5;
    let t1 = spec.start + spec.duration + 0.5;
    let np = ((t1 - t0) * spec.pose_rate).ceil() as usize + 1;
    let mut poses = Vec::new();
    let mut handshakes = Vec::new();
    let mut trajectories = Vec::new();
    for hand in Hand::BOTH {
        let path = Trajectory::random(&mut path_rng, &controller_home(hand), t0 - 1.0, t1 + 1.0, &spec.trajectory);
        let id = pose_stream_id(hand);
        let tl = Timeline::regular(&mut jitter_rng, t0, spec.pose_rate, np, spec.latencies.pose, spec.jitter);
        let samples = tl
            .capture
            .iter()
            .zip(&tl.rec)
            .map(|(c, r)| Sample {
                t_rec: *r,
                payload: path.at(*c).rh_to_lh().expect("right-handed truth"),
            })
            .collect();
        poses.push(Stream::new(id.clone(), samples).expect("ordered"));
        // Handshakes run at 10 Hz before the recording.
        let hs = Timeline::regular(
            &mut jitter_rng,
            t0 - spec.handshakes as f64 / 10.0,
            10.0,
            spec.handshakes,
            spec.latencies.pose,
            spec.jitter,
        );
        handshakes.push(hs.capture.iter().copied().zip(hs.rec.iter().copied()).collect());
        truth.latencies.insert(id.clone(), spec.latencies.pose);
        truth.timelines.insert(id, tl);
        trajectories.push(path);
    }
    let arr2 = |mut v: Vec<FrameStream>| -> [FrameStream; 3] {
        let c = v.pop().expect("3");
        let b = v.pop().expect("3");
        let a = v.pop().expect("3");
        [a, b, c]
    };
    let right = arr2(cameras.pop().expect("2"));
    let left = arr2(cameras.pop().expect("2"));
    let rp = poses.pop().expect("2");
    let lp = poses.pop().expect("2");
    let rh = handshakes.pop().expect("2");
    let lh = handshakes.pop().expect("2");
    let rt = trajectories.pop().expect("2");
    let lt = trajectories.pop().expect("2");
    SyntheticStreams {
        cameras: [left, right],
        poses: [lp, rp],
        handshakes: [lh, rh],
        trajectories: [lt, rt],
        truth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emitted_poses_mirror_the_truth() {
        let s = gen_pose_stream(&ScenarioSpec::default());
        for (hand, stream) in Hand::BOTH.iter().zip(&s.poses) {
            let tl = &s.truth.timelines[&pose_stream_id(*hand)];
            for (smp, c) in stream.samples().iter().zip(&tl.capture) {
                let rh = smp.payload.lh_to_rh().unwrap();
                assert!(rh.distance(&s.trajectories[hand.index()].at(*c)) <= 1e-12);
            }
        }
    }

    #[test]
    fn rates_and_latencies() {
        let spec = ScenarioSpec::default();
        let s = gen_pose_stream(&spec);
        assert_eq!(s.cameras[0][0].len(), 45);
        let tl = &s.truth.timelines["left/visual"];
        assert_eq!(tl.capture[0], 100.0);
        for (c, r) in tl.capture.iter().zip(&tl.rec) {
            assert!((r - c - 0.14).abs() < 1e-12);
        }
        let p = &s.truth.timelines["right/pose"].capture;
        assert!((p[1] - p[0] - 1.0 / 72.0).abs() < 1e-12);
        assert_eq!(s.handshakes[0].len(), 100);
    }

    #[test]
    fn seed_determinism() {
        let spec = ScenarioSpec {
            jitter: 0.01,
            seed: 42,
            ..ScenarioSpec::default()
        };
        assert_eq!(gen_pose_stream(&spec), gen_pose_stream(&spec));
        let other = ScenarioSpec { seed: 43, ..spec.clone() };
        assert_ne!(gen_pose_stream(&spec).poses, gen_pose_stream(&other).poses);
    }

    #[test]
    fn trajectory_hits_waypoints() {
        let mut rng = sub_rng(1, 0);
        let home = controller_home(Hand::Left);
        let tr = Trajectory::random(&mut rng, &home, 0.0, 2.0, &TrajectorySpec::default());
        for (t, p) in tr.times.iter().zip(&tr.poses) {
            assert!(tr.at(*t).distance(p) < 1e-12);
        }
        assert_eq!(tr.at(-5.0), tr.poses[0]);
    }
}
