//! Desk-scale conditional video diffusion: forward noising, an
//! exposure-conditioned denoiser with hand-written backward passes,
//! x0-prediction training, and DDPM sampling with classifier-free
//! guidance.

pub mod checkpoint;
pub mod model;
pub mod params;
pub mod sample;
pub mod schedule;
pub mod train;

pub use checkpoint::{checkpoint_load, checkpoint_save, FORMAT_VERSION};
pub use model::{
    conditioning_groups, denoise, denoise_loss, denoise_loss_grad, Denoiser, DenoiserConfig,
    Tape,
};
pub use params::ParamSet;
pub use sample::{sample, sample_timesteps, validate_intervals, SamplerConfig};
pub use schedule::{q_sample, NoiseSchedule};
pub use train::{
    cosine_lr, from_model_range, target_video, to_model_range, train_step, ModelState,
    StepStats, TrainConfig,
};
