//! Shared fixtures for the criterion benches.

use bidemo_core::geometry::{Handedness, RigidTransform};
use bidemo_core::handeye::CalibrationSet;
use bidemo_core::imaging::GrayImage;
use bidemo_core::synth::handeye::{gen_handeye_set, random_ground_truth, PoseNoise};
use bidemo_core::synth::marker::render_markers;
use bidemo_core::synth::sensor::{gen_deformation, render_tactile_image, DeformationParams, RenderConfig, SensorCamera, SensorDesign};
use bidemo_core::synth::visual_intrinsics;
use bidemo_core::fiducial::{Dictionary, MarkerDescriptor};
use bidemo_core::tactile::SensorGeometry;
use nalgebra::{UnitQuaternion, Vector3};

/// A deformed 640×480 tactile frame, its sensor geometry and camera.
pub fn tactile_frame() -> (GrayImage, SensorGeometry, SensorCamera) {
    let design = SensorDesign::default();
    let cam = SensorCamera::nominal();
    let edges = gen_deformation(&design, &DeformationParams::quadratic(0.006, 0.003));
    let render = render_tactile_image(&edges, &design, &cam, &RenderConfig::default()).expect("in view");
    (render.image, design.geometry(), cam)
}

/// A 320×240 frame with one tilted 5 cm marker 30 cm away.
pub fn marker_frame() -> (GrayImage, Dictionary) {
    let dict = Dictionary::builtin(0.05);
    let desc = MarkerDescriptor {
        physical_size: 0.05,
        ..dict.markers()[7]
    };
    let pose = RigidTransform::new(
        UnitQuaternion::from_scaled_axis(Vector3::new(0.3, -0.2, 0.4)),
        Vector3::new(0.01, -0.02, 0.3),
        Handedness::Right,
    );
    let img = render_markers(&[(desc, pose)], &visual_intrinsics()).expect("in view").0;
    (img, dict)
}

/// Ten noisy calibration pairs.
pub fn handeye_set() -> CalibrationSet {
    let (x, y) = random_ground_truth(1);
    let noise = PoseNoise {
        rotation_deg: 0.1,
        translation: 0.001,
    };
    gen_handeye_set(&x, &y, 10, noise, 1).0
}
