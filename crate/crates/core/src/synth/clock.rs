//! Cameras filming an on-screen clock marker.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use nalgebra::{UnitQuaternion, Vector3};

use crate::fiducial::Dictionary;
use crate::geometry::{CameraIntrinsics, Handedness, RigidTransform};
use crate::imaging::GrayImage;
use crate::session::{camera_stream_id, Camera, ClockSpec, Hand};
use crate::sync::{FrameRef, FrameSource, SyncError};

use super::marker::render_markers;
use super::streams::{ScenarioSpec, SyntheticStreams};
use super::SynthError;

/// A clock whose ticks coincide with the cameras' capture instants, cycling
/// through the first 50 dictionary ids.
pub fn clock_for(spec: &ScenarioSpec) -> ClockSpec {
    ClockSpec {
        start: spec.start,
        interval: 1.0 / spec.camera_rate,
        ids: (0..50).collect(),
        marker_size: 0.05,
    }
}

/// Screen pose in front of a camera: 25 cm away, turned slightly.
pub fn screen_pose() -> RigidTransform {
    RigidTransform::new(
        UnitQuaternion::from_scaled_axis(Vector3::new(0.1, 0.2, 0.05)),
        Vector3::new(0.004, -0.003, 0.25),
        Handedness::Right,
    )
}

/// The clock showing `id`, as seen by a camera with intrinsics `k`.
pub fn render_clock(clock: &ClockSpec, dictionary: &Dictionary, id: u32, k: &CameraIntrinsics) -> Result<GrayImage, SynthError> {
    let desc = dictionary
        .get(id)
        .ok_or_else(|| SynthError::Invalid(format!("clock id {id} not in dictionary")))?;
    let desc = crate::fiducial::MarkerDescriptor {
        physical_size: clock.marker_size,
        ..*desc
    };
    Ok(render_markers(&[(desc, screen_pose())], k)?.0)
}

/// Clock id each camera frame shows.
pub fn clock_ids(streams: &SyntheticStreams, clock: &ClockSpec) -> BTreeMap<FrameRef, (String, u32)> {
    let book = clock.codebook();
    let mut out = BTreeMap::new();
    for hand in Hand::BOTH {
        for cam in Camera::ALL {
            let id = camera_stream_id(hand, cam);
            let tl = &streams.truth.timelines[&id];
            for (s, t) in streams.cameras[hand.index()][cam as usize].samples().iter().zip(&tl.capture) {
                let shown = book.id_at(*t).expect("periodic clock");
                out.insert(s.payload.clone(), (id.clone(), shown));
            }
        }
    }
    out
}

/// In-memory frames of a clock recording, rendered on first use per camera
/// and id.
pub struct ClockFrames {
    clock: ClockSpec,
    dictionary: Dictionary,
    intrinsics: BTreeMap<String, CameraIntrinsics>,
    frames: BTreeMap<FrameRef, (String, u32)>,
    cache: Mutex<HashMap<(String, u32), GrayImage>>,
}

impl ClockFrames {
    pub fn new(streams: &SyntheticStreams, clock: &ClockSpec, intrinsics: BTreeMap<String, CameraIntrinsics>) -> Self {
        Self {
            clock: clock.clone(),
            dictionary: Dictionary::builtin(clock.marker_size),
            intrinsics,
            frames: clock_ids(streams, clock),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl FrameSource for ClockFrames {
    fn load(&self, frame: &FrameRef) -> Result<GrayImage, SyncError> {
        let (stream, id) = self
            .frames
            .get(frame)
            .ok_or_else(|| SyncError::Load(frame.0.clone()))?;
        let key = (stream.clone(), *id);
        if let Some(img) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(img.clone());
        }
        let k = self
            .intrinsics
            .get(stream)
            .ok_or_else(|| SyncError::Load(format!("no intrinsics for {stream}")))?;
        let img = render_clock(&self.clock, &self.dictionary, *id, k).map_err(|e| SyncError::Load(e.to_string()))?;
        self.cache.lock().expect("cache lock").insert(key, img.clone());
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiducial::decode_clock;
    use crate::synth::sensor::SensorCamera;
    use crate::synth::streams::{gen_pose_stream, StreamLatencies};
    use crate::synth::visual_intrinsics;
    use crate::sync::{measure_camera_latency, ClockReader};

    #[test]
    fn every_id_decodes_in_both_camera_types() {
        let spec = ScenarioSpec::default();
        let clock = clock_for(&spec);
        let dict = Dictionary::builtin(clock.marker_size);
        let book = clock.codebook();
        for k in [visual_intrinsics(), SensorCamera::nominal().k] {
            for id in clock.ids.iter().step_by(7) {
                let img = render_clock(&clock, &dict, *id, &k).unwrap();
                assert_eq!(decode_clock(&img, &book, &dict).unwrap().0, *id);
            }
        }
    }

    #[test]
    fn jitter_free_latency_is_exact() {
        let spec = ScenarioSpec {
            max_phase: 0.0,
            duration: 0.5,
            latencies: StreamLatencies::TYPICAL,
            ..ScenarioSpec::default()
        };
        let streams = gen_pose_stream(&spec);
        let clock = clock_for(&spec);
        let mut ks = BTreeMap::new();
        ks.insert("left/visual".to_string(), visual_intrinsics());
        ks.insert("left/tactile0".to_string(), SensorCamera::nominal().k);
        let frames = ClockFrames::new(&streams, &clock, ks);
        let dict = Dictionary::builtin(clock.marker_size);
        let book = clock.codebook();
        let reader = ClockReader::new(&book, &dict);
        for (stream, lat) in [(&streams.cameras[0][0], 0.14), (&streams.cameras[0][1], 0.08)] {
            let rec = measure_camera_latency(stream, &reader, &frames).unwrap();
            assert!((rec.t_latency - lat).abs() < 1e-9, "{rec:?}");
        }
    }
}
