//! Ancestral DDPM sampling with classifier-free guidance on the x̂0
//! estimate.

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::blur::{ColorSpace, ExposureInterval, FrameSequence};
use crate::diffusion::model::{conditioning_groups, denoise};
use crate::diffusion::train::{from_model_range, to_model_range, ModelState};
use crate::error::{Error, Result};
use crate::img::Image;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Diffusion steps (a strided subset of the training schedule).
    pub steps: usize,
    /// Classifier-free guidance scale; 1 disables the unconditional pass.
    pub guidance_scale: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 50, guidance_scale: 1.1, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self, t_steps: usize) -> Result<()> {
        if self.steps == 0 || self.steps > t_steps {
            return Err(Error::Config(format!(
                "sampler steps {} outside 1..={t_steps}",
                self.steps
            )));
        }
        if !(self.guidance_scale >= 0.0) {
            return Err(Error::Config(format!(
                "guidance scale must be >= 0, got {}",
                self.guidance_scale
            )));
        }
        Ok(())
    }
}

/// Descending sub-schedule of `steps` timesteps ending at the smallest.
pub fn sample_timesteps(t_steps: usize, steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (0..steps)
        .map(|i| (((i + 1) as f64) * t_steps as f64 / steps as f64).round() as usize)
        .map(|t| t.clamp(1, t_steps))
        .collect();
    ts.dedup();
    ts.reverse();
    ts
}

/// Validates a requested target-interval list, naming the offending pair.
pub fn validate_intervals(intervals: &[ExposureInterval]) -> Result<()> {
    if intervals.is_empty() {
        return Err(Error::Config("need at least one target interval".into()));
    }
    for (i, iv) in intervals.iter().enumerate() {
        if !(iv.end > iv.start) {
            return Err(Error::Config(format!(
                "interval {i} invalid: [{}, {}]",
                iv.start, iv.end
            )));
        }
    }
    for i in 1..intervals.len() {
        if intervals[i].start < intervals[i - 1].end - crate::blur::TIME_EPS {
            return Err(Error::Config(format!(
                "intervals {} and {i} overlap: [{}, {}] then [{}, {}]",
                i - 1,
                intervals[i - 1].start,
                intervals[i - 1].end,
                intervals[i].start,
                intervals[i].end
            )));
        }
    }
    Ok(())
}

/// Samples a video for `blur` with the requested target intervals.
///
/// Ancestral DDPM from pure noise; at each step the guided denoised
/// estimate is `uncond + s·(cond − uncond)`. A scale of exactly 1 runs
/// the conditional path only (the combination collapses), which also
/// makes it bit-identical to conditional-only sampling under a fixed
/// seed. Final frames are clamped to [0, 1].
pub fn sample(
    blur: &Image,
    intervals: &[ExposureInterval],
    state: &ModelState,
    sampler: &SamplerConfig,
) -> Result<FrameSequence> {
    sampler.validate(state.schedule.t_steps())?;
    validate_intervals(intervals)?;
    let cfg = state.model.config();
    if intervals.len() > cfg.max_frames || !intervals.len().is_multiple_of(cfg.group_size) {
        return Err(Error::Config(format!(
            "{} target frames incompatible with group size {} and max {}",
            intervals.len(),
            cfg.group_size,
            cfg.max_frames
        )));
    }
    let groups = conditioning_groups(intervals, cfg.group_size)?;
    let cond = to_model_range(blur);
    let f = intervals.len();
    let (h, w, c) = (cfg.frame_height, cfg.frame_width, cfg.channels);
    if blur.dim() != (h, w, c) {
        return Err(Error::Shape(format!(
            "blur image is {:?}, model expects {:?}",
            blur.dim(),
            (h, w, c)
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut x = Array4::from_shape_fn((f, h, w, c), |_| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });

    let ts = sample_timesteps(state.schedule.t_steps(), sampler.steps);
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = if i + 1 < ts.len() { ts[i + 1] } else { 0 };
        let xhat_cond = denoise(
            &state.model,
            &state.params,
            &state.schedule,
            &x,
            Some(&cond),
            &groups,
            t,
        )?;
        let mut xhat = if sampler.guidance_scale == 1.0 {
            xhat_cond
        } else {
            let xhat_uncond = denoise(
                &state.model,
                &state.params,
                &state.schedule,
                &x,
                None,
                &groups,
                t,
            )?;
            let s = sampler.guidance_scale;
            &xhat_uncond + (xhat_cond - &xhat_uncond) * s
        };
        xhat.mapv_inplace(|v| v.clamp(-1.0, 1.0));

        let ab_t = state.schedule.alpha_bar(t);
        let ab_prev = state.schedule.alpha_bar(t_prev);
        let beta_eff = 1.0 - ab_t / ab_prev;
        let coef_x0 = ab_prev.sqrt() * beta_eff / (1.0 - ab_t);
        let coef_xt = (ab_t / ab_prev).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let var = beta_eff * (1.0 - ab_prev) / (1.0 - ab_t);
        x = &xhat * coef_x0 + &x * coef_xt;
        if var > 0.0 && t_prev > 0 {
            let std = var.sqrt();
            let z = Array4::from_shape_fn((f, h, w, c), |_| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            });
            x += &(z * std);
        }
    }

    let mut frames = Vec::with_capacity(f);
    for i in 0..f {
        let frame = x.index_axis(ndarray::Axis(0), i).to_owned();
        frames.push(from_model_range(&frame));
    }
    FrameSequence::new(frames.clone(), intervals.to_vec(), ColorSpace::Srgb)
}
