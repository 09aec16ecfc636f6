pub mod geometry;
pub mod fiducial;
pub mod handeye;
pub mod imaging;
pub mod pipeline;
pub mod pnp;
pub mod session;
pub mod sync;
pub mod synth;
pub mod tactile;
