//! Exposure integration: discretizes the time integral of sensor-plane
//! irradiance over a window as the equal-weight linear-light mean of the
//! fine samples it contains, then applies the camera response.

use ndarray::Array3;

use crate::blur::color::{srgb_decode, srgb_encode};
use crate::blur::interval::{
    CameraResponse, ColorSpace, ExposureInterval, FrameSequence, TIME_EPS,
};
use crate::error::{Error, Result};
use crate::img::Image;

/// Integrates the fine samples of `samples` that fall inside `window`.
///
/// Preconditions checked here: the window boundaries align to the sample
/// grid within `TIME_EPS`, every intersecting sample is fully contained,
/// the contained samples tile the window with no gap, and they share a
/// uniform duration.
pub fn integrate_exposure(
    samples: &FrameSequence,
    window: ExposureInterval,
    response: CameraResponse,
) -> Result<Image> {
    let contained = contained_sample_range(samples, window)?;
    let (h, w, c) = samples.frame_dim();
    let mut acc = Array3::<f64>::zeros((h, w, c));
    for i in contained.clone() {
        match samples.color_space() {
            ColorSpace::Linear => acc += samples.frame(i),
            ColorSpace::Srgb => acc += &samples.frame(i).mapv(srgb_decode),
        }
    }
    acc /= contained.len() as f64;
    Ok(match response {
        CameraResponse::Identity => acc,
        CameraResponse::Srgb => acc.mapv(srgb_encode),
    })
}

/// Index range of samples tiling `window`, after the alignment and
/// coverage checks.
fn contained_sample_range(
    samples: &FrameSequence,
    window: ExposureInterval,
) -> Result<std::ops::Range<usize>> {
    let intervals = samples.intervals();
    let mut first = None;
    let mut last = None;
    for (i, iv) in intervals.iter().enumerate() {
        if iv.overlaps(&window) {
            if !iv.contained_in(&window) {
                return Err(Error::Alignment(format!(
                    "sample {i} [{}, {}] straddles window [{}, {}]",
                    iv.start, iv.end, window.start, window.end
                )));
            }
            if first.is_none() {
                first = Some(i);
            }
            last = Some(i);
        }
    }
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) => (f, l),
        _ => {
            return Err(Error::Coverage(format!(
                "no samples intersect window [{}, {}]",
                window.start, window.end
            )))
        }
    };
    // Boundary alignment: the window endpoints must coincide with the
    // first sample's start and the last sample's end.
    if (intervals[first].start - window.start).abs() > TIME_EPS
        || (intervals[last].end - window.end).abs() > TIME_EPS
    {
        return Err(Error::Alignment(format!(
            "window [{}, {}] does not align to sample grid [{}, {}]",
            window.start, window.end, intervals[first].start, intervals[last].end
        )));
    }
    // Contiguity: no dead time between consecutive contained samples.
    for i in first..last {
        if (intervals[i + 1].start - intervals[i].end).abs() > TIME_EPS {
            return Err(Error::Coverage(format!(
                "gap between samples {i} and {} inside window",
                i + 1
            )));
        }
    }
    // Uniform fine timestep.
    let d0 = intervals[first].duration();
    for (i, iv) in intervals.iter().enumerate().take(last + 1).skip(first) {
        if (iv.duration() - d0).abs() > TIME_EPS {
            return Err(Error::Alignment(format!(
                "sample {i} duration {} differs from grid step {d0}",
                iv.duration()
            )));
        }
    }
    Ok(first..last + 1)
}
