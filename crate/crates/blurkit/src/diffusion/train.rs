//! Training: the x0-prediction L2 objective with condition dropout and a
//! decoupled-weight-decay adaptive-moment (AdamW) update.
//!
//! All randomness for step `k` derives from `(state.seed, k)`, so
//! trajectories are reproducible and resume exactly across checkpoints.

use ndarray::{Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::blur::BlurTask;
use crate::diffusion::model::{denoise_loss_grad, Denoiser, DenoiserConfig};
use crate::diffusion::params::ParamSet;
use crate::diffusion::schedule::NoiseSchedule;
use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};
use crate::img::Image;

/// Everything needed to train or sample: model, parameters, optimizer
/// moments, schedule, and the run seed.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub params: ParamSet,
    pub opt_m: ParamSet,
    pub opt_v: ParamSet,
    pub step: u64,
    pub seed: u64,
}

impl ModelState {
    pub fn new(
        denoiser: DenoiserConfig,
        encoder: EncoderConfig,
        schedule: NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        let model = Denoiser::new(denoiser, encoder)?;
        let params = model.init_params(seed);
        let opt_m = params.zeros_like();
        let opt_v = params.zeros_like();
        Ok(Self { model, schedule, params, opt_m, opt_v, step: 0, seed })
    }
}

/// Optimizer and objective hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            dropout: 0.2,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Scalar results of one step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// SHA-256 over the batch's condition-dropout draws.
    pub dropout_draws_hash: String,
}

/// Cosine decay from `base` to `floor` over `total` steps.
pub fn cosine_lr(base: f64, floor: f64, step: u64, total: u64) -> f64 {
    if total == 0 || step >= total {
        return floor;
    }
    let progress = step as f64 / total as f64;
    floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Maps an image in [0, 1] to the model's [-1, 1] range.
pub fn to_model_range(img: &Image) -> Image {
    img.mapv(|v| 2.0 * v - 1.0)
}

/// Maps model-range values back to clamped [0, 1] pixels.
pub fn from_model_range(x: &Image) -> Image {
    x.mapv(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

/// Stacks a task's ground-truth targets into a scaled (F, H, W, C) video.
pub fn target_video(task: &BlurTask) -> Result<Array4<f64>> {
    let targets = task
        .targets
        .as_ref()
        .ok_or_else(|| Error::Config("task has no ground-truth targets".into()))?;
    let (h, w, c) = targets[0].dim();
    let mut video = Array4::zeros((targets.len(), h, w, c));
    for (i, frame) in targets.iter().enumerate() {
        video
            .index_axis_mut(Axis(0), i)
            .assign(&to_model_range(frame));
    }
    Ok(video)
}

/// Per-item randomness, pre-drawn sequentially so batch parallelism stays
/// deterministic.
struct ItemDraw {
    t: usize,
    drop_condition: bool,
    noise_seed: u64,
}

fn gaussian_video(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_fn(shape, |_| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    })
}

/// One optimization step over a bucketed batch (all tasks must share the
/// target frame count). Returns the mean loss.
pub fn train_step(
    state: &mut ModelState,
    batch: &[BlurTask],
    cfg: &TrainConfig,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let f0 = batch[0].intervals.len();
    for task in batch {
        if task.intervals.len() != f0 {
            return Err(Error::Config(
                "bucketed batching requires equal frame counts".into(),
            ));
        }
    }

    let t_steps = state.schedule.t_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed ^ state.step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let draws: Vec<ItemDraw> = (0..batch.len())
        .map(|_| ItemDraw {
            t: rng.gen_range(1..=t_steps),
            drop_condition: rng.gen_bool(cfg.dropout),
            noise_seed: rng.gen(),
        })
        .collect();

    let mut hasher = sha2::Sha256::new();
    for d in &draws {
        hasher.update([d.drop_condition as u8]);
    }
    let dropout_draws_hash = hex::encode(hasher.finalize());

    let results: Vec<Result<(f64, ParamSet)>> = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(task, draw)| {
            let x0 = target_video(task)?;
            let noise = gaussian_video(x0.dim(), draw.noise_seed);
            let cond = if draw.drop_condition {
                None
            } else {
                Some(to_model_range(&task.blur))
            };
            denoise_loss_grad(
                &state.model,
                &state.params,
                &state.schedule,
                &x0,
                cond.as_ref(),
                &task.intervals,
                draw.t,
                &noise,
            )
        })
        .collect();

    let mut loss_sum = 0.0;
    let mut grads: Option<ParamSet> = None;
    let scale = 1.0 / batch.len() as f64;
    for r in results {
        let (loss, g) = r?;
        loss_sum += loss;
        match &mut grads {
            None => {
                let mut g0 = g;
                g0.scale_all(scale);
                grads = Some(g0);
            }
            Some(acc) => acc.axpy(scale, &g),
        }
    }
    let loss = loss_sum * scale;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            details: format!("batch of {} tasks, frame count {f0}", batch.len()),
        });
    }
    let grads = grads.expect("non-empty batch");

    adamw_update(
        &mut state.params,
        &grads,
        &mut state.opt_m,
        &mut state.opt_v,
        state.step + 1,
        cfg,
    );
    state.step += 1;
    if !state.params.all_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            details: "parameters became non-finite after update".into(),
        });
    }
    Ok(StepStats { step: state.step, loss, lr: cfg.lr, dropout_draws_hash })
}

/// Decoupled-weight-decay Adam with bias correction.
fn adamw_update(
    params: &mut ParamSet,
    grads: &ParamSet,
    m: &mut ParamSet,
    v: &mut ParamSet,
    t: u64,
    cfg: &TrainConfig,
) {
    let b1c = 1.0 - cfg.beta1.powi(t as i32);
    let b2c = 1.0 - cfg.beta2.powi(t as i32);
    for (((_, mut p), (_, g)), ((_, mut mm), (_, mut vv))) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(m.iter_mut().zip(v.iter_mut()))
    {
        ndarray::Zip::from(&mut p)
            .and(&g)
            .and(&mut mm)
            .and(&mut vv)
            .for_each(|p, &g, mm, vv| {
                *mm = cfg.beta1 * *mm + (1.0 - cfg.beta1) * g;
                *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * g * g;
                let mhat = *mm / b1c;
                let vhat = *vv / b2c;
                *p -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * *p);
            });
    }
}

impl ParamSet {
    /// Multiplies every entry by `a`.
    pub fn scale_all(&mut self, a: f64) {
        for (_, mut t) in self.iter_mut() {
            t.mapv_inplace(|v| v * a);
        }
    }
}

/// Condition image for an unconditional batch item, exposed for tests.
pub fn zero_condition(h: usize, w: usize, c: usize) -> Image {
    Array3::zeros((h, w, c))
}
