//! Protocol runner and metric reports (JSON + CSV).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::blur::{ColorSpace, FrameSequence};
use crate::error::{Error, Result};
use crate::img::Image;
use crate::metrics::{
    bidirectional_epe, bidirectional_patch_psnr, bidirectional_patch_ssim, blur_consistency_psnr,
    frame_psnr_curve, PatchGrid,
};

/// Per-protocol metric configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub tag: String,
    pub psnr_grid: PatchGrid,
    pub ssim_grid: PatchGrid,
    /// Also emit the per-frame PSNR curve (past/present/future runs).
    pub per_frame_curve: bool,
}

impl ProtocolSpec {
    pub fn present() -> Self {
        Self {
            tag: "present".into(),
            psnr_grid: PatchGrid::single_pixel(),
            ssim_grid: PatchGrid { height: 32, width: 32 },
            per_frame_curve: false,
        }
    }

    pub fn past_present_future() -> Self {
        Self {
            tag: "past_present_future".into(),
            per_frame_curve: true,
            ..Self::present()
        }
    }

    pub fn exposure_control(setting: &str) -> Self {
        Self {
            tag: format!("exposure_control/{setting}"),
            ..Self::present()
        }
    }
}

/// One video to score: the blurred input, ground truth, and prediction,
/// plus an optional flow oracle for end-point error.
pub struct EvalVideo<'a> {
    pub label: String,
    pub blur: &'a Image,
    pub blur_space: ColorSpace,
    pub gt: &'a FrameSequence,
    pub pred: &'a FrameSequence,
    #[allow(clippy::type_complexity)]
    pub flow_fn: Option<Box<dyn Fn(&Image, &Image) -> Array3<f64> + 'a>>,
}

/// Per-video metric values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoEval {
    pub label: String,
    pub psnr_p: f64,
    pub ssim_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epe_foreground: Option<f64>,
    pub blur_consistency_psnr: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external: BTreeMap<String, f64>,
}

/// Aggregated results of one protocol run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: String,
    pub toolkit_version: String,
    pub count: usize,
    pub aggregates: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_frame_psnr: Option<Vec<f64>>,
    /// Free-form annotations (e.g. reference values from other sources,
    /// recorded as context rather than reproduced results).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub context: BTreeMap<String, String>,
    pub videos: Vec<VideoEval>,
}

impl MetricReport {
    /// Means over per-video values; `epe` aggregates only videos that
    /// carry it.
    pub fn recompute_aggregates(videos: &[VideoEval]) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        if videos.is_empty() {
            return out;
        }
        let n = videos.len() as f64;
        out.insert("psnr_p".into(), videos.iter().map(|v| v.psnr_p).sum::<f64>() / n);
        out.insert("ssim_p".into(), videos.iter().map(|v| v.ssim_p).sum::<f64>() / n);
        out.insert(
            "blur_consistency_psnr".into(),
            videos.iter().map(|v| v.blur_consistency_psnr).sum::<f64>() / n,
        );
        let epe: Vec<f64> = videos.iter().filter_map(|v| v.epe).collect();
        if !epe.is_empty() {
            out.insert("epe".into(), epe.iter().sum::<f64>() / epe.len() as f64);
        }
        let epe_fg: Vec<f64> = videos.iter().filter_map(|v| v.epe_foreground).collect();
        if !epe_fg.is_empty() {
            out.insert(
                "epe_foreground".into(),
                epe_fg.iter().sum::<f64>() / epe_fg.len() as f64,
            );
        }
        let mut ext_names: Vec<String> = Vec::new();
        for v in videos {
            for k in v.external.keys() {
                if !ext_names.contains(k) {
                    ext_names.push(k.clone());
                }
            }
        }
        for name in ext_names {
            let vals: Vec<f64> = videos.iter().filter_map(|v| v.external.get(&name)).copied().collect();
            if !vals.is_empty() {
                out.insert(
                    format!("external/{name}"),
                    vals.iter().sum::<f64>() / vals.len() as f64,
                );
            }
        }
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// One row per video plus a trailing aggregate row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("label,psnr_p,ssim_p,epe,epe_foreground,blur_consistency_psnr\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for v in &self.videos {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                v.label,
                v.psnr_p,
                v.ssim_p,
                fmt(v.epe),
                fmt(v.epe_foreground),
                v.blur_consistency_psnr
            ));
        }
        out.push_str(&format!(
            "mean,{},{},{},{},{}\n",
            fmt(self.aggregates.get("psnr_p").copied()),
            fmt(self.aggregates.get("ssim_p").copied()),
            fmt(self.aggregates.get("epe").copied()),
            fmt(self.aggregates.get("epe_foreground").copied()),
            fmt(self.aggregates.get("blur_consistency_psnr").copied()),
        ));
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// External (pluggable) video metric: receives prediction and ground
/// truth, returns one scalar. The hook point for learned metrics that
/// are out of scope here.
pub type ExternalMetric<'a> = (&'a str, &'a dyn Fn(&FrameSequence, &FrameSequence) -> f64);

/// Scores every video under the protocol and aggregates.
pub fn run_protocol(
    spec: &ProtocolSpec,
    videos: &[EvalVideo<'_>],
    externals: &[ExternalMetric<'_>],
) -> Result<MetricReport> {
    let mut evals = Vec::with_capacity(videos.len());
    let mut curves: Vec<Vec<f64>> = Vec::new();
    for v in videos {
        if v.pred.len() != v.gt.len() {
            return Err(Error::Config(format!(
                "video {}: prediction has {} frames, ground truth {}",
                v.label,
                v.pred.len(),
                v.gt.len()
            )));
        }
        let psnr_p = bidirectional_patch_psnr(v.pred, v.gt, &spec.psnr_grid)?;
        // SSIM patches larger than the frame fall back to one full-frame
        // patch.
        let (h, w, _) = v.gt.frame_dim();
        let ssim_grid = PatchGrid {
            height: spec.ssim_grid.height.min(h),
            width: spec.ssim_grid.width.min(w),
        };
        let ssim_p = bidirectional_patch_ssim(v.pred, v.gt, &ssim_grid)?;
        let (epe, epe_foreground) = match &v.flow_fn {
            Some(f) if v.pred.len() >= 2 => {
                let e = bidirectional_epe(f.as_ref(), v.pred, v.gt)?;
                (Some(e.all), e.foreground)
            }
            _ => (None, None),
        };
        let blur_psnr = blur_consistency_psnr(v.blur, v.blur_space, v.pred)?;
        let mut external = BTreeMap::new();
        for (name, f) in externals {
            external.insert(name.to_string(), f(v.pred, v.gt));
        }
        if spec.per_frame_curve {
            curves.push(frame_psnr_curve(v.pred, v.gt)?);
        }
        evals.push(VideoEval {
            label: v.label.clone(),
            psnr_p,
            ssim_p,
            epe,
            epe_foreground,
            blur_consistency_psnr: blur_psnr,
            external,
        });
    }
    let per_frame_psnr = if spec.per_frame_curve && !curves.is_empty() {
        let len = curves[0].len();
        if curves.iter().any(|c| c.len() != len) {
            return Err(Error::Config(
                "per-frame curve requires equal frame counts across videos".into(),
            ));
        }
        let mut mean = vec![0.0; len];
        for c in &curves {
            for (m, v) in mean.iter_mut().zip(c) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= curves.len() as f64;
        }
        Some(mean)
    } else {
        None
    };
    let aggregates = MetricReport::recompute_aggregates(&evals);
    Ok(MetricReport {
        protocol: spec.tag.clone(),
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        count: evals.len(),
        aggregates,
        per_frame_psnr,
        context: BTreeMap::new(),
        videos: evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blur::ExposureInterval;
    use ndarray::Array3;

    fn tiny_seq(v: f64, frames: usize) -> FrameSequence {
        let imgs = vec![Array3::from_elem((4, 4, 3), v); frames];
        let ivs = (0..frames)
            .map(|i| {
                ExposureInterval::new(
                    -0.5 + i as f64 / frames as f64,
                    -0.5 + (i + 1) as f64 / frames as f64,
                )
                .unwrap()
            })
            .collect();
        FrameSequence::new(imgs, ivs, ColorSpace::Linear).unwrap()
    }

    #[test]
    fn empty_input_gives_empty_report() {
        let report = run_protocol(&ProtocolSpec::present(), &[], &[]).unwrap();
        assert_eq!(report.count, 0);
        assert!(report.videos.is_empty());
        assert!(report.aggregates.is_empty());
    }

    #[test]
    fn aggregates_match_recomputation() {
        let gt1 = tiny_seq(0.4, 3);
        let gt2 = tiny_seq(0.6, 3);
        let pred1 = tiny_seq(0.5, 3);
        let pred2 = tiny_seq(0.6, 3);
        let blur1 = Array3::from_elem((4, 4, 3), 0.4);
        let blur2 = Array3::from_elem((4, 4, 3), 0.6);
        let videos = vec![
            EvalVideo {
                label: "a".into(),
                blur: &blur1,
                blur_space: ColorSpace::Linear,
                gt: &gt1,
                pred: &pred1,
                flow_fn: None,
            },
            EvalVideo {
                label: "b".into(),
                blur: &blur2,
                blur_space: ColorSpace::Linear,
                gt: &gt2,
                pred: &pred2,
                flow_fn: None,
            },
        ];
        let report = run_protocol(&ProtocolSpec::present(), &videos, &[]).unwrap();
        assert_eq!(report.count, 2);
        let re = MetricReport::recompute_aggregates(&report.videos);
        assert_eq!(report.aggregates, re);
    }

    #[test]
    fn mismatched_counts_rejected() {
        let gt = tiny_seq(0.4, 3);
        let pred = tiny_seq(0.4, 2);
        let blur = Array3::from_elem((4, 4, 3), 0.4);
        let videos = vec![EvalVideo {
            label: "x".into(),
            blur: &blur,
            blur_space: ColorSpace::Linear,
            gt: &gt,
            pred: &pred,
            flow_fn: None,
        }];
        assert!(run_protocol(&ProtocolSpec::present(), &videos, &[]).is_err());
    }

    #[test]
    fn curve_has_one_value_per_frame() {
        let gt = tiny_seq(0.4, 5);
        let blur = Array3::from_elem((4, 4, 3), 0.4);
        let videos = vec![EvalVideo {
            label: "x".into(),
            blur: &blur,
            blur_space: ColorSpace::Linear,
            gt: &gt,
            pred: &gt,
            flow_fn: None,
        }];
        let report =
            run_protocol(&ProtocolSpec::past_present_future(), &videos, &[]).unwrap();
        assert_eq!(report.per_frame_psnr.as_ref().unwrap().len(), 5);
    }

    #[test]
    fn external_hook_lands_in_report() {
        let gt = tiny_seq(0.4, 2);
        let blur = Array3::from_elem((4, 4, 3), 0.4);
        let videos = vec![EvalVideo {
            label: "x".into(),
            blur: &blur,
            blur_space: ColorSpace::Linear,
            gt: &gt,
            pred: &gt,
            flow_fn: None,
        }];
        let probe = |_p: &FrameSequence, _g: &FrameSequence| 0.125;
        let report =
            run_protocol(&ProtocolSpec::present(), &videos, &[("probe", &probe)]).unwrap();
        assert_eq!(report.videos[0].external["probe"], 0.125);
        assert_eq!(report.aggregates["external/probe"], 0.125);
    }

    #[test]
    fn reports_round_trip_files() {
        let dir = tempfile::tempdir().unwrap();
        let gt = tiny_seq(0.4, 2);
        let blur = Array3::from_elem((4, 4, 3), 0.4);
        let videos = vec![EvalVideo {
            label: "x".into(),
            blur: &blur,
            blur_space: ColorSpace::Linear,
            gt: &gt,
            pred: &gt,
            flow_fn: None,
        }];
        let report = run_protocol(&ProtocolSpec::present(), &videos, &[]).unwrap();
        let jp = dir.path().join("report.json");
        let cp = dir.path().join("report.csv");
        report.write_json(&jp).unwrap();
        report.write_csv(&cp).unwrap();
        let text = std::fs::read_to_string(&jp).unwrap();
        let back: MetricReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.count, 1);
        let csv = std::fs::read_to_string(&cp).unwrap();
        assert!(csv.lines().count() == 3); // header + video + mean
    }
}
