//! Bidirectional evaluation suite.
//!
//! Recovering video from one blurred image leaves the playback direction
//! ambiguous, globally and per region. Every metric here therefore
//! compares the prediction both as-is and time-reversed — per patch for
//! image metrics, per pixel for flow end-point error — and keeps the
//! better side.

pub mod report;

use ndarray::{s, Array3, Array4, Axis};

use crate::blur::{linear_to_srgb, srgb_to_linear, ColorSpace, FrameSequence};
use crate::error::{Error, Result};
use crate::img::{mse_to_psnr, Image};

pub use report::{run_protocol, EvalVideo, MetricReport, ProtocolSpec, VideoEval};

/// PSNR reported for exact matches (finite so frame averages stay
/// defined).
pub const PSNR_CAP: f64 = 100.0;

/// Spatial patch tiling; trailing pixels that do not fill a whole patch
/// are truncated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
}

impl PatchGrid {
    pub fn single_pixel() -> Self {
        Self { height: 1, width: 1 }
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("patch dimensions must be >= 1".into()));
        }
        if self.height > h || self.width > w {
            return Err(Error::Shape(format!(
                "patch {}×{} larger than image {h}×{w}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Top-left corners covering the image, truncating the remainder.
    fn corners(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let rows = h / self.height;
        let cols = w / self.width;
        for r in 0..rows {
            for c in 0..cols {
                out.push((r * self.height, c * self.width));
            }
        }
        out
    }
}

/// Whether smaller or larger metric values are better; Eq.-6-style
/// selection keeps the better branch accordingly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    LowerBetter,
    HigherBetter,
}

fn check_pair(pred: &FrameSequence, gt: &FrameSequence) -> Result<(usize, usize, usize)> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let (h, w, c) = pred.frame_dim();
    if gt.frame_dim() != (h, w, c) {
        return Err(Error::Shape(format!(
            "prediction frames {:?} vs ground truth {:?}",
            pred.frame_dim(),
            gt.frame_dim()
        )));
    }
    Ok((h, w, c))
}

/// Copies the patch video at `(y0, x0)` into an (F, ph, pw, C) block.
fn patch_video(seq: &FrameSequence, y0: usize, x0: usize, grid: &PatchGrid) -> Array4<f64> {
    let f = seq.len();
    let (_, _, c) = seq.frame_dim();
    let mut out = Array4::zeros((f, grid.height, grid.width, c));
    for (i, frame) in seq.frames().iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&frame.slice(s![
            y0..y0 + grid.height,
            x0..x0 + grid.width,
            ..
        ]));
    }
    out
}

/// Mean squared error over a whole patch video.
pub fn patch_mse(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    let n = a.len() as f64;
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Bidirectional patch-based version of an arbitrary metric: evaluates
/// the metric on each forward patch video and on the patch at the same
/// location of the time-reversed prediction, keeps the better branch,
/// and averages over patches.
pub fn bidirectional_patch_metric(
    metric: &dyn Fn(&Array4<f64>, &Array4<f64>) -> f64,
    orientation: Orientation,
    pred: &FrameSequence,
    gt: &FrameSequence,
    grid: &PatchGrid,
) -> Result<f64> {
    let (h, w, _) = check_pair(pred, gt)?;
    grid.check(h, w)?;
    let rev = pred.time_reversed();
    let corners = grid.corners(h, w);
    let mut sum = 0.0;
    for &(y0, x0) in &corners {
        let g = patch_video(gt, y0, x0, grid);
        let f = metric(&patch_video(pred, y0, x0, grid), &g);
        let r = metric(&patch_video(&rev, y0, x0, grid), &g);
        sum += match orientation {
            Orientation::LowerBetter => f.min(r),
            Orientation::HigherBetter => f.max(r),
        };
    }
    Ok(sum / corners.len() as f64)
}

/// Per-frame MSEs after per-patch orientation selection: each patch picks
/// forward or reverse by its whole-video MSE, then patch MSEs are
/// averaged per frame under the chosen orientation.
pub fn bidirectional_frame_mse(
    pred: &FrameSequence,
    gt: &FrameSequence,
    grid: &PatchGrid,
) -> Result<Vec<f64>> {
    let (h, w, _) = check_pair(pred, gt)?;
    grid.check(h, w)?;
    let rev = pred.time_reversed();
    let corners = grid.corners(h, w);
    let frames = pred.len();
    let mut per_frame = vec![0.0; frames];
    for &(y0, x0) in &corners {
        let g = patch_video(gt, y0, x0, grid);
        let f = patch_video(pred, y0, x0, grid);
        let r = patch_video(&rev, y0, x0, grid);
        let chosen = if patch_mse(&f, &g) <= patch_mse(&r, &g) { f } else { r };
        for k in 0..frames {
            let a = chosen.index_axis(Axis(0), k);
            let b = g.index_axis(Axis(0), k);
            let n = a.len() as f64;
            per_frame[k] += a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / n;
        }
    }
    for v in per_frame.iter_mut() {
        *v /= corners.len() as f64;
    }
    Ok(per_frame)
}

/// Bidirectional patch PSNR: per-patch orientation selection on MSE,
/// patch-averaged per-frame MSE, per-frame PSNR, mean over frames.
/// Zero-MSE frames contribute the cap.
pub fn bidirectional_patch_psnr(
    pred: &FrameSequence,
    gt: &FrameSequence,
    grid: &PatchGrid,
) -> Result<f64> {
    let per_frame = bidirectional_frame_mse(pred, gt, grid)?;
    let sum: f64 = per_frame.iter().map(|&m| mse_to_psnr(m, PSNR_CAP)).sum();
    Ok(sum / per_frame.len() as f64)
}

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// SSIM of two patch videos: one uniform window per frame (all pixels and
/// channels as samples), averaged over frames. Constants K₁ = 0.01,
/// K₂ = 0.03 at unit dynamic range keep degenerate patches stable.
pub fn patch_ssim(pred: &Array4<f64>, gt: &Array4<f64>) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let frames = pred.dim().0;
    let mut sum = 0.0;
    for k in 0..frames {
        let a = pred.index_axis(Axis(0), k);
        let b = gt.index_axis(Axis(0), k);
        let n = a.len() as f64;
        let mu_a = a.sum() / n;
        let mu_b = b.sum() / n;
        let mut var_a = 0.0;
        let mut var_b = 0.0;
        let mut cov = 0.0;
        for (&x, &y) in a.iter().zip(b.iter()) {
            var_a += (x - mu_a) * (x - mu_a);
            var_b += (y - mu_b) * (y - mu_b);
            cov += (x - mu_a) * (y - mu_b);
        }
        var_a /= n;
        var_b /= n;
        cov /= n;
        sum += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
            / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    }
    sum / frames as f64
}

/// Bidirectional patch SSIM (similarity orientation: max branch).
pub fn bidirectional_patch_ssim(
    pred: &FrameSequence,
    gt: &FrameSequence,
    grid: &PatchGrid,
) -> Result<f64> {
    bidirectional_patch_metric(&patch_ssim, Orientation::HigherBetter, pred, gt, grid)
}

/// Mean end-point error, over all pixels and over ground-truth
/// foreground pixels (where the gt flow is nonzero).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpeValues {
    pub all: f64,
    pub foreground: Option<f64>,
}

/// Bidirectional end-point error: first-to-last flow of the ground truth
/// against the better of the prediction's forward flow and the flow of
/// the prediction played in reverse, per pixel.
pub fn bidirectional_epe(
    flow_fn: &dyn Fn(&Image, &Image) -> Array3<f64>,
    pred: &FrameSequence,
    gt: &FrameSequence,
) -> Result<EpeValues> {
    let (h, w, _) = check_pair(pred, gt)?;
    if pred.len() < 2 {
        return Err(Error::Config("end-point error needs at least 2 frames".into()));
    }
    let f_gt = flow_fn(gt.frame(0), gt.frame(gt.len() - 1));
    let f_fwd = flow_fn(pred.frame(0), pred.frame(pred.len() - 1));
    let f_rev = flow_fn(pred.frame(pred.len() - 1), pred.frame(0));
    for (name, f) in [("gt", &f_gt), ("forward", &f_fwd), ("reverse", &f_rev)] {
        if f.dim() != (h, w, 2) {
            return Err(Error::Shape(format!(
                "{name} flow is {:?}, expected ({h}, {w}, 2)",
                f.dim()
            )));
        }
    }
    let mut sum = 0.0;
    let mut fg_sum = 0.0;
    let mut fg_count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let gx = f_gt[[y, x, 0]];
            let gy = f_gt[[y, x, 1]];
            let ef = ((f_fwd[[y, x, 0]] - gx).powi(2) + (f_fwd[[y, x, 1]] - gy).powi(2)).sqrt();
            let er = ((f_rev[[y, x, 0]] - gx).powi(2) + (f_rev[[y, x, 1]] - gy).powi(2)).sqrt();
            let e = ef.min(er);
            sum += e;
            if gx != 0.0 || gy != 0.0 {
                fg_sum += e;
                fg_count += 1;
            }
        }
    }
    Ok(EpeValues {
        all: sum / (h * w) as f64,
        foreground: if fg_count > 0 { Some(fg_sum / fg_count as f64) } else { None },
    })
}

/// PSNR between the blurred input and the duration-weighted linear-light
/// average of `frames`, re-encoded into the blur image's color space.
pub fn blur_consistency_psnr(
    blur: &Image,
    blur_space: ColorSpace,
    frames: &FrameSequence,
) -> Result<f64> {
    let (h, w, c) = frames.frame_dim();
    if blur.dim() != (h, w, c) {
        return Err(Error::Shape(format!(
            "blur {:?} vs frames {:?}",
            blur.dim(),
            (h, w, c)
        )));
    }
    let mut acc = Array3::<f64>::zeros((h, w, c));
    let mut total = 0.0;
    for (frame, iv) in frames.frames().iter().zip(frames.intervals()) {
        let linear = match frames.color_space() {
            ColorSpace::Linear => frame.clone(),
            ColorSpace::Srgb => srgb_to_linear(frame)?,
        };
        acc += &(linear * iv.duration());
        total += iv.duration();
    }
    acc /= total;
    acc.mapv_inplace(|v| v.clamp(0.0, 1.0));
    let recombined = match blur_space {
        ColorSpace::Linear => acc,
        ColorSpace::Srgb => linear_to_srgb(&acc)?,
    };
    Ok(crate::img::psnr(blur, &recombined, PSNR_CAP))
}

/// Per-frame PSNR curve under the globally better playback direction
/// (whole-video MSE decides the orientation).
pub fn frame_psnr_curve(pred: &FrameSequence, gt: &FrameSequence) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    let rev = pred.time_reversed();
    let total = |p: &FrameSequence| -> f64 {
        p.frames()
            .iter()
            .zip(gt.frames())
            .map(|(a, b)| crate::img::mse(a, b))
            .sum()
    };
    let chosen = if total(pred) <= total(&rev) { pred } else { &rev };
    Ok(chosen
        .frames()
        .iter()
        .zip(gt.frames())
        .map(|(a, b)| mse_to_psnr(crate::img::mse(a, b), PSNR_CAP))
        .collect())
}
