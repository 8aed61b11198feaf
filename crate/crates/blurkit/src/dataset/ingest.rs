//! Ingestion of user-supplied high-FPS frame folders.
//!
//! A clip folder holds numbered PNG frames plus a `manifest.json`
//! describing the frame rate, color space, and frame order. Intervals are
//! assigned from the FPS assuming zero native dead time; an optional
//! interpolator hook upsamples to a higher effective rate.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blur::{ColorSpace, ExposureInterval, FrameSequence};
use crate::error::{Error, Result};
use crate::img::{load_png, Image};

/// `manifest.json` schema for a clip folder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipManifest {
    pub fps: f64,
    pub color_space: ColorSpace,
    pub frames: Vec<String>,
}

impl ClipManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ClipManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        if self.frames.len() < 2 {
            return Err(Error::Config(format!(
                "clip needs at least 2 frames, got {}",
                self.frames.len()
            )));
        }
        Ok(())
    }
}

/// Synthesizes an intermediate frame between `a` and `b` at fractional
/// position `alpha` in [0, 1).
pub trait FrameInterpolator {
    fn interpolate(&self, a: &Image, b: &Image, alpha: f64) -> Image;
}

/// Nearest-neighbor duplication: every synthesized frame copies the
/// earlier source frame.
pub struct DuplicateInterpolator;

impl FrameInterpolator for DuplicateInterpolator {
    fn interpolate(&self, a: &Image, _b: &Image, _alpha: f64) -> Image {
        a.clone()
    }
}

/// Linear cross-fade between the bracketing source frames.
pub struct LerpInterpolator;

impl FrameInterpolator for LerpInterpolator {
    fn interpolate(&self, a: &Image, b: &Image, alpha: f64) -> Image {
        a * (1.0 - alpha) + b * alpha
    }
}

/// Loads a clip folder into a `FrameSequence` on a seconds timeline.
///
/// `upsample_factor` = 1 keeps native frames; a factor above 1 requires
/// an interpolator hook and splits every native frame slot into that many
/// sub-frames synthesized by the hook.
pub fn ingest_clip(
    dir: &Path,
    upsample_factor: usize,
    hook: Option<&dyn FrameInterpolator>,
) -> Result<FrameSequence> {
    let manifest = ClipManifest::load(dir)?;
    ingest_manifest(dir, &manifest, upsample_factor, hook)
}

pub fn ingest_manifest(
    dir: &Path,
    manifest: &ClipManifest,
    upsample_factor: usize,
    hook: Option<&dyn FrameInterpolator>,
) -> Result<FrameSequence> {
    manifest.validate()?;
    if upsample_factor == 0 {
        return Err(Error::Config("upsample factor must be >= 1".into()));
    }
    if upsample_factor > 1 && hook.is_none() {
        return Err(Error::Unsupported(
            "temporal upsampling requested but no interpolator hook provided".into(),
        ));
    }

    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut offending: Vec<PathBuf> = Vec::new();
    let mut dims: Option<(usize, usize, usize)> = None;
    for name in &manifest.frames {
        let path = dir.join(name);
        match load_png(&path) {
            Ok(img) => {
                match dims {
                    None => dims = Some(img.dim()),
                    Some(d) if d != img.dim() => {
                        offending.push(path.clone());
                        continue;
                    }
                    _ => {}
                }
                frames.push(img);
            }
            Err(_) => offending.push(path),
        }
    }
    if !offending.is_empty() {
        return Err(Error::Ingestion {
            msg: "missing or size-mismatched frames".into(),
            files: offending,
        });
    }

    let native_dt = 1.0 / manifest.fps;
    let n = frames.len();
    let (out_frames, out_intervals) = if upsample_factor == 1 {
        let intervals = (0..n)
            .map(|i| ExposureInterval::new(i as f64 * native_dt, (i + 1) as f64 * native_dt))
            .collect::<Result<Vec<_>>>()?;
        (frames, intervals)
    } else {
        let hook = hook.expect("checked above");
        let f = upsample_factor;
        let fine_dt = native_dt / f as f64;
        let mut out = Vec::with_capacity(n * f);
        let mut intervals = Vec::with_capacity(n * f);
        for i in 0..n {
            let next = &frames[(i + 1).min(n - 1)];
            for j in 0..f {
                let alpha = j as f64 / f as f64;
                let frame = if j == 0 {
                    frames[i].clone()
                } else {
                    hook.interpolate(&frames[i], next, alpha)
                };
                let t0 = i as f64 * native_dt + j as f64 * fine_dt;
                out.push(frame);
                intervals.push(ExposureInterval::new(t0, t0 + fine_dt)?);
            }
        }
        (out, intervals)
    };
    FrameSequence::new(out_frames, out_intervals, manifest.color_space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::img::save_png;
    use ndarray::Array3;

    fn write_clip(dir: &Path, n: usize, fps: f64) {
        let names: Vec<String> = (0..n).map(|i| format!("{i:04}.png")).collect();
        for (i, name) in names.iter().enumerate() {
            let img = Array3::from_elem((4, 4, 3), i as f64 / 255.0);
            save_png(&img, &dir.join(name)).unwrap();
        }
        let manifest = ClipManifest {
            fps,
            color_space: ColorSpace::Srgb,
            frames: names,
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).unwrap(),
        )
        .unwrap();
    }

    #[test]
    fn intervals_assigned_from_fps() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), 4, 240.0);
        let seq = ingest_clip(dir.path(), 1, None).unwrap();
        assert_eq!(seq.len(), 4);
        for (i, iv) in seq.intervals().iter().enumerate() {
            assert!((iv.start - i as f64 / 240.0).abs() < 1e-12);
            assert!((iv.duration() - 1.0 / 240.0).abs() < 1e-12);
        }
        assert_eq!(seq.color_space(), ColorSpace::Srgb);
    }

    #[test]
    fn upsample_without_hook_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), 4, 240.0);
        let err = ingest_clip(dir.path(), 2, None).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn duplicate_hook_doubles_frames_pairwise() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), 4, 240.0);
        let seq = ingest_clip(dir.path(), 2, Some(&DuplicateInterpolator)).unwrap();
        assert_eq!(seq.len(), 8);
        for i in 0..4 {
            assert_eq!(seq.frame(2 * i), seq.frame(2 * i + 1));
        }
        assert!((seq.interval(7).end - 4.0 / 240.0).abs() < 1e-12);
    }

    #[test]
    fn missing_frames_listed() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), 3, 120.0);
        std::fs::remove_file(dir.path().join("0001.png")).unwrap();
        match ingest_clip(dir.path(), 1, None) {
            Err(Error::Ingestion { files, .. }) => {
                assert_eq!(files.len(), 1);
                assert!(files[0].ends_with("0001.png"));
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }
}
