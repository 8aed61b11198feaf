//! Blur task synthesis: turns a finely sampled clip into one
//! training/eval unit — a blurred input, normalized target intervals,
//! and per-target ground-truth frames.

use serde::{Deserialize, Serialize};

use crate::blur::integrate::integrate_exposure;
use crate::blur::interval::{CameraResponse, ColorSpace, ExposureInterval, FrameSequence};
use crate::error::{Error, Result};
use crate::img::Image;

/// Number of output frames in the long-blur (dead-time) mode.
pub const LONG_BLUR_TARGETS: usize = 16;

/// Video generation mode for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlurMode {
    /// Targets tile the capture window evenly.
    Present { targets: usize },
    /// 32 or 48 source frames blurred together; 16 short-exposure targets
    /// with dead time between them (each covers one source frame).
    LongBlur { source_frames: usize },
    /// Targets extend symmetrically before and after the capture, each
    /// with the duration of one capture source frame.
    PastPresentFuture { targets: usize, capture_frames: usize },
}

impl BlurMode {
    pub fn target_count(&self) -> usize {
        match self {
            BlurMode::Present { targets } => *targets,
            BlurMode::LongBlur { .. } => LONG_BLUR_TARGETS,
            BlurMode::PastPresentFuture { targets, .. } => *targets,
        }
    }

    /// Normalized target intervals for this mode (capture ↦ [-0.5, 0.5]).
    pub fn target_intervals(&self) -> Result<Vec<ExposureInterval>> {
        match *self {
            BlurMode::Present { targets } => {
                if targets == 0 {
                    return Err(Error::Config("present mode needs >= 1 target".into()));
                }
                let n = targets as f64;
                (0..targets)
                    .map(|k| {
                        ExposureInterval::new(-0.5 + k as f64 / n, -0.5 + (k + 1) as f64 / n)
                    })
                    .collect()
            }
            BlurMode::LongBlur { source_frames } => {
                if source_frames % LONG_BLUR_TARGETS != 0 || source_frames <= LONG_BLUR_TARGETS {
                    return Err(Error::Config(format!(
                        "long-blur source frame count {source_frames} must be a multiple of \
                         {LONG_BLUR_TARGETS} greater than it (e.g. 32 or 48)"
                    )));
                }
                let stride = source_frames / LONG_BLUR_TARGETS;
                let s = source_frames as f64;
                (0..LONG_BLUR_TARGETS)
                    .map(|k| {
                        let j = (k * stride) as f64;
                        ExposureInterval::new(-0.5 + j / s, -0.5 + (j + 1.0) / s)
                    })
                    .collect()
            }
            BlurMode::PastPresentFuture { targets, capture_frames } => {
                if capture_frames == 0 {
                    return Err(Error::Config("capture_frames must be >= 1".into()));
                }
                if targets < capture_frames || (targets - capture_frames) % 2 != 0 {
                    return Err(Error::Config(format!(
                        "past/present/future needs targets >= capture_frames with an even \
                         difference, got {targets} targets over {capture_frames} capture frames"
                    )));
                }
                let before = (targets - capture_frames) / 2;
                let n = capture_frames as f64;
                (0..targets)
                    .map(|k| {
                        let j = k as f64 - before as f64;
                        ExposureInterval::new(-0.5 + j / n, -0.5 + (j + 1.0) / n)
                    })
                    .collect()
            }
        }
    }
}

/// Placement of the capture window within a fine clip, in fine-frame
/// indices.
#[derive(Debug, Clone, Copy)]
pub struct TaskParams {
    pub mode: BlurMode,
    pub capture_start: usize,
    pub capture_len: usize,
    pub response: CameraResponse,
}

/// One training/eval unit.
#[derive(Debug, Clone)]
pub struct BlurTask {
    pub blur: Image,
    pub color_space: ColorSpace,
    pub intervals: Vec<ExposureInterval>,
    pub targets: Option<Vec<Image>>,
    pub mode: BlurMode,
    pub scene_seed: Option<u64>,
    pub fps_native: Option<f64>,
}

impl BlurTask {
    /// Ground-truth frames as a `FrameSequence` (when present).
    pub fn target_sequence(&self) -> Result<Option<FrameSequence>> {
        match &self.targets {
            None => Ok(None),
            Some(frames) => Ok(Some(FrameSequence::new(
                frames.clone(),
                self.intervals.clone(),
                self.color_space,
            )?)),
        }
    }
}

/// Builds a `BlurTask` from a finely sampled clip.
///
/// The capture window (fine frames `capture_start .. capture_start +
/// capture_len`) maps to the normalized exposure [-0.5, 0.5]; the blurred
/// input integrates that window and each target integrates its own
/// sub-window. Every target window must align to the fine sample grid,
/// which couples the mode's frame counts to `capture_len`.
pub fn synthesize_blur_task(clip: &FrameSequence, params: &TaskParams) -> Result<BlurTask> {
    let TaskParams { mode, capture_start, capture_len, response } = *params;
    if capture_len == 0 || capture_start + capture_len > clip.len() {
        return Err(Error::Config(format!(
            "capture range {capture_start}+{capture_len} exceeds clip of {} fine frames",
            clip.len()
        )));
    }
    // Per-mode divisibility of the capture into fine frames.
    let divisor = match mode {
        BlurMode::Present { targets } => targets,
        BlurMode::LongBlur { source_frames } => source_frames,
        BlurMode::PastPresentFuture { capture_frames, .. } => capture_frames,
    };
    if divisor == 0 || capture_len % divisor != 0 {
        return Err(Error::Config(format!(
            "capture of {capture_len} fine frames is not divisible into {divisor} units \
             required by {mode:?}"
        )));
    }
    let t_a = clip.interval(capture_start).start;
    let t_b = clip.interval(capture_start + capture_len - 1).end;
    let scale = t_b - t_a;
    let to_clip_time = |normalized: f64| t_a + (normalized + 0.5) * scale;

    let capture_window = ExposureInterval::new(t_a, t_b)?;
    let blur = integrate_exposure(clip, capture_window, response)?;

    let intervals = mode.target_intervals()?;
    let mut targets = Vec::with_capacity(intervals.len());
    for iv in &intervals {
        let raw = ExposureInterval::new(to_clip_time(iv.start), to_clip_time(iv.end))?;
        let gt = integrate_exposure(clip, raw, response).map_err(|e| match e {
            Error::Coverage(m) => Error::Config(format!(
                "clip does not cover target [{}, {}]: {m}",
                iv.start, iv.end
            )),
            other => other,
        })?;
        targets.push(gt);
    }

    Ok(BlurTask {
        blur,
        color_space: response.output_space(),
        intervals,
        targets: Some(targets),
        mode,
        scene_seed: None,
        fps_native: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn ramp_clip(n: usize, lo: f64, hi: f64) -> FrameSequence {
        let frames = (0..n)
            .map(|i| {
                let v = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                Array3::from_elem((2, 2, 3), v)
            })
            .collect();
        let intervals = (0..n)
            .map(|i| ExposureInterval::new(i as f64 / n as f64, (i + 1) as f64 / n as f64).unwrap())
            .collect();
        FrameSequence::new(frames, intervals, ColorSpace::Linear).unwrap()
    }

    #[test]
    fn present_mode_interval_arithmetic() {
        let mode = BlurMode::Present { targets: 16 };
        let ivs = mode.target_intervals().unwrap();
        assert_eq!(ivs.len(), 16);
        for (k, iv) in ivs.iter().enumerate() {
            assert!((iv.start - (-0.5 + k as f64 / 16.0)).abs() < 1e-12);
            assert!((iv.end - (-0.5 + (k + 1) as f64 / 16.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_time_mode_interval_arithmetic() {
        let mode = BlurMode::LongBlur { source_frames: 32 };
        let ivs = mode.target_intervals().unwrap();
        assert_eq!(ivs.len(), 16);
        // Target k exposes source frame 2k only: [-0.5+2k/32, -0.5+(2k+1)/32].
        for (k, iv) in ivs.iter().enumerate() {
            assert!((iv.start - (-0.5 + 2.0 * k as f64 / 32.0)).abs() < 1e-12);
            assert!((iv.end - (-0.5 + (2.0 * k as f64 + 1.0) / 32.0)).abs() < 1e-12);
        }
        // Gaps of one source frame between consecutive targets.
        for w in ivs.windows(2) {
            assert!((w[1].start - w[0].end - 1.0 / 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn past_present_future_interval_arithmetic() {
        let mode = BlurMode::PastPresentFuture { targets: 13, capture_frames: 7 };
        let ivs = mode.target_intervals().unwrap();
        assert_eq!(ivs.len(), 13);
        assert!((ivs[0].start - (-0.5 - 3.0 / 7.0)).abs() < 1e-12);
        assert!((ivs[0].end - (-0.5 - 2.0 / 7.0)).abs() < 1e-12);
        assert!((ivs[12].end - (0.5 + 3.0 / 7.0)).abs() < 1e-12);
    }

    #[test]
    fn present_task_blur_is_window_mean() {
        let clip = ramp_clip(16, 0.0, 1.0);
        let params = TaskParams {
            mode: BlurMode::Present { targets: 4 },
            capture_start: 0,
            capture_len: 16,
            response: CameraResponse::Identity,
        };
        let task = synthesize_blur_task(&clip, &params).unwrap();
        let mean = (0..16).map(|i| i as f64 / 15.0).sum::<f64>() / 16.0;
        for &v in task.blur.iter() {
            assert!((v - mean).abs() < 1e-12);
        }
        assert_eq!(task.targets.as_ref().unwrap().len(), 4);
    }

    #[test]
    fn mode_inconsistent_with_clip_rejected() {
        let clip = ramp_clip(10, 0.0, 1.0);
        let params = TaskParams {
            mode: BlurMode::Present { targets: 4 },
            capture_start: 0,
            capture_len: 10,
            response: CameraResponse::Identity,
        };
        assert!(matches!(
            synthesize_blur_task(&clip, &params),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ppf_needs_clip_margin() {
        let clip = ramp_clip(7, 0.0, 1.0);
        let params = TaskParams {
            mode: BlurMode::PastPresentFuture { targets: 13, capture_frames: 7 },
            capture_start: 0,
            capture_len: 7,
            response: CameraResponse::Identity,
        };
        // No fine frames before/after the capture: must fail.
        assert!(synthesize_blur_task(&clip, &params).is_err());

        let clip = ramp_clip(13, 0.0, 1.0);
        let params = TaskParams {
            mode: BlurMode::PastPresentFuture { targets: 13, capture_frames: 7 },
            capture_start: 3,
            capture_len: 7,
            response: CameraResponse::Identity,
        };
        let task = synthesize_blur_task(&clip, &params).unwrap();
        assert_eq!(task.intervals.len(), 13);
    }
}
