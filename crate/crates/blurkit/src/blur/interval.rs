//! Exposure intervals and tagged frame sequences.
//!
//! All timing is expressed on a normalized capture timeline: the input
//! image's exposure maps to [-0.5, 0.5], and frame intervals may lie
//! outside that range when predicting before or after the capture.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;

/// Tolerance for grid-alignment and ordering checks on the time axis.
pub const TIME_EPS: f64 = 1e-9;

/// Half-open exposure window `[start, end)` on the normalized timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureInterval {
    pub start: f64,
    pub end: f64,
}

impl ExposureInterval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::Domain(format!(
                "interval bounds must be finite, got [{start}, {end}]"
            )));
        }
        if end <= start {
            return Err(Error::Domain(format!(
                "interval end must exceed start, got [{start}, {end}]"
            )));
        }
        Ok(Self { start, end })
    }

    /// The full normalized input exposure.
    pub fn unit() -> Self {
        Self { start: -0.5, end: 0.5 }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    /// Whether `self` is contained in `other` within `TIME_EPS`.
    pub fn contained_in(&self, other: &ExposureInterval) -> bool {
        self.start >= other.start - TIME_EPS && self.end <= other.end + TIME_EPS
    }

    /// Whether the half-open windows overlap by more than `TIME_EPS`.
    pub fn overlaps(&self, other: &ExposureInterval) -> bool {
        self.start < other.end - TIME_EPS && other.start < self.end - TIME_EPS
    }
}

/// Color space tag carried by frames and blurred images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    Srgb,
    Linear,
}

/// Camera response applied to integrated irradiance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraResponse {
    Identity,
    Srgb,
}

impl CameraResponse {
    /// Color space of images produced under this response.
    pub fn output_space(&self) -> ColorSpace {
        match self {
            CameraResponse::Identity => ColorSpace::Linear,
            CameraResponse::Srgb => ColorSpace::Srgb,
        }
    }
}

/// Ordered frames, each tagged with its exposure interval.
///
/// Invariants enforced at construction: at least one frame, one interval
/// per frame, intervals sequential and non-overlapping (up to `TIME_EPS`),
/// all frames sharing dimensions.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<Image>,
    intervals: Vec<ExposureInterval>,
    color_space: ColorSpace,
}

impl FrameSequence {
    pub fn new(
        frames: Vec<Image>,
        intervals: Vec<ExposureInterval>,
        color_space: ColorSpace,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Config("frame sequence must be non-empty".into()));
        }
        if frames.len() != intervals.len() {
            return Err(Error::Config(format!(
                "{} frames but {} intervals",
                frames.len(),
                intervals.len()
            )));
        }
        let dim = frames[0].dim();
        for (i, f) in frames.iter().enumerate() {
            if f.dim() != dim {
                return Err(Error::Shape(format!(
                    "frame {i} has shape {:?}, expected {:?}",
                    f.dim(),
                    dim
                )));
            }
        }
        for w in intervals.windows(2) {
            if w[1].start < w[0].end - TIME_EPS {
                return Err(Error::Config(format!(
                    "intervals out of order or overlapping: [{}, {}] then [{}, {}]",
                    w[0].start, w[0].end, w[1].start, w[1].end
                )));
            }
        }
        Ok(Self { frames, intervals, color_space })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Image {
        &self.frames[i]
    }

    pub fn intervals(&self) -> &[ExposureInterval] {
        &self.intervals
    }

    pub fn interval(&self, i: usize) -> ExposureInterval {
        self.intervals[i]
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    pub fn frame_dim(&self) -> (usize, usize, usize) {
        self.frames[0].dim()
    }

    /// Time span from the first interval's start to the last's end.
    pub fn span(&self) -> ExposureInterval {
        ExposureInterval {
            start: self.intervals[0].start,
            end: self.intervals[self.intervals.len() - 1].end,
        }
    }

    /// Plays the sequence backwards: frame order is reversed while the
    /// interval timeline is kept, so frame `k` takes the k-th interval.
    pub fn time_reversed(&self) -> FrameSequence {
        let mut frames = self.frames.clone();
        frames.reverse();
        FrameSequence {
            frames,
            intervals: self.intervals.clone(),
            color_space: self.color_space,
        }
    }

    pub fn into_parts(self) -> (Vec<Image>, Vec<ExposureInterval>, ColorSpace) {
        (self.frames, self.intervals, self.color_space)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn zero_duration_rejected() {
        assert!(ExposureInterval::new(0.2, 0.2).is_err());
        assert!(ExposureInterval::new(0.3, 0.1).is_err());
    }

    #[test]
    fn out_of_unit_range_allowed() {
        // Past/future prediction uses windows beyond [-0.5, 0.5].
        let iv = ExposureInterval::new(-1.2, -0.9).unwrap();
        assert!((iv.duration() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn overlapping_intervals_rejected() {
        let f = || Array3::<f64>::zeros((2, 2, 3));
        let ivs = vec![
            ExposureInterval::new(0.0, 0.5).unwrap(),
            ExposureInterval::new(0.4, 0.9).unwrap(),
        ];
        assert!(FrameSequence::new(vec![f(), f()], ivs, ColorSpace::Linear).is_err());
    }

    #[test]
    fn adjacent_intervals_share_boundary() {
        let f = || Array3::<f64>::zeros((2, 2, 3));
        let ivs = vec![
            ExposureInterval::new(0.0, 0.5).unwrap(),
            ExposureInterval::new(0.5, 1.0).unwrap(),
        ];
        assert!(FrameSequence::new(vec![f(), f()], ivs, ColorSpace::Linear).is_ok());
    }

    #[test]
    fn mismatched_frame_shapes_rejected() {
        let ivs = vec![
            ExposureInterval::new(0.0, 0.5).unwrap(),
            ExposureInterval::new(0.5, 1.0).unwrap(),
        ];
        let seq = FrameSequence::new(
            vec![Array3::zeros((2, 2, 3)), Array3::zeros((3, 2, 3))],
            ivs,
            ColorSpace::Linear,
        );
        assert!(seq.is_err());
    }

    #[test]
    fn reversal_swaps_frames_not_intervals() {
        let a = Array3::from_elem((2, 2, 3), 0.1);
        let b = Array3::from_elem((2, 2, 3), 0.9);
        let ivs = vec![
            ExposureInterval::new(0.0, 0.5).unwrap(),
            ExposureInterval::new(0.5, 1.0).unwrap(),
        ];
        let seq = FrameSequence::new(vec![a.clone(), b.clone()], ivs, ColorSpace::Linear).unwrap();
        let rev = seq.time_reversed();
        assert_eq!(rev.frame(0), &b);
        assert_eq!(rev.frame(1), &a);
        assert_eq!(rev.interval(0), seq.interval(0));
    }
}
