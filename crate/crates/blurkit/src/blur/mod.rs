//! Physical motion-blur formation: color-space transfer, exposure
//! integration over a normalized timeline, and blur-task synthesis.

pub mod color;
pub mod integrate;
pub mod interval;
pub mod task;

pub use color::{linear_to_srgb, srgb_decode, srgb_encode, srgb_to_linear};
pub use integrate::integrate_exposure;
pub use interval::{CameraResponse, ColorSpace, ExposureInterval, FrameSequence, TIME_EPS};
pub use task::{synthesize_blur_task, BlurMode, BlurTask, TaskParams, LONG_BLUR_TARGETS};
