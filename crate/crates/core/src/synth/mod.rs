//! Ground-truth generators: rendered sensor and marker images, multi-rate
//! streams with injected latencies, and hand-eye calibration sets.

pub mod clock;
pub mod handeye;
pub mod marker;
pub mod sensor;
pub mod session;
pub mod streams;

use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("rendered geometry leaves the image: {0}")]
    EdgeOutOfView(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// The wrist-mounted action camera.
pub fn visual_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(260.0, 260.0, 160.0, 120.0, 320, 240).expect("valid")
}
