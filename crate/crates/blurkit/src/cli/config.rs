//! Per-command configuration schemas. Every run resolves its config
//! (file + flag overrides) and writes the result next to its outputs, so
//! any run can be reproduced from the snapshot and seed alone. Unknown
//! keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::blur::{BlurMode, CameraResponse};
use crate::dataset::CorpusConfig;
use crate::diffusion::{DenoiserConfig, TrainConfig};
use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};

pub fn load_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&PathBuf>,
) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

pub fn write_snapshot<T: Serialize>(config: &T, out_dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("resolved_config.json");
    let json = serde_json::to_string_pretty(config).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub seed: u64,
    pub n_tasks: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_tasks: 16,
            out_dir: PathBuf::from("corpus"),
            corpus: CorpusConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MakeBlurConfig {
    pub clip_dir: PathBuf,
    pub out_dir: PathBuf,
    pub mode: BlurMode,
    /// Fine-frame index where the capture window starts.
    pub capture_start: usize,
    /// Capture length in fine frames; 0 means the whole clip.
    pub capture_len: usize,
    /// Temporal upsampling factor applied at ingestion (1 = native).
    pub upsample: usize,
    /// Interpolator hook for upsampling: "duplicate" or "lerp".
    pub interpolator: Option<String>,
    pub response: CameraResponse,
}

impl Default for MakeBlurConfig {
    fn default() -> Self {
        Self {
            clip_dir: PathBuf::from("clip"),
            out_dir: PathBuf::from("blur_task"),
            mode: BlurMode::Present { targets: 16 },
            capture_start: 0,
            capture_len: 0,
            upsample: 1,
            interpolator: None,
            response: CameraResponse::Srgb,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { t_steps: 1000, beta_start: 1e-4, beta_end: 2e-2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCmdConfig {
    pub seed: u64,
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    pub steps: u64,
    pub batch_size: usize,
    pub optimizer: TrainConfig,
    pub denoiser: DenoiserConfig,
    pub encoder: EncoderConfig,
    pub schedule: ScheduleConfig,
    /// Periodic checkpoint interval in steps (0 = final only).
    pub checkpoint_every: u64,
    /// Resume from an existing checkpoint.
    pub resume: Option<PathBuf>,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("run"),
            steps: 1000,
            batch_size: 2,
            optimizer: TrainConfig::default(),
            denoiser: DenoiserConfig::default(),
            encoder: EncoderConfig::default(),
            schedule: ScheduleConfig::default(),
            checkpoint_every: 0,
            resume: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleCmdConfig {
    pub seed: u64,
    pub checkpoint: PathBuf,
    /// Blurred input image (PNG) or a task directory holding blur.png.
    pub blur: PathBuf,
    /// Target intervals as [start, end] pairs on the normalized timeline.
    pub intervals: Vec<[f64; 2]>,
    pub out_dir: PathBuf,
    pub steps: usize,
    pub guidance: f64,
    /// Also write a horizontal strip of all frames for inspection.
    pub contact_sheet: bool,
}

impl Default for SampleCmdConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            checkpoint: PathBuf::from("run/model.ckpt"),
            blur: PathBuf::from("blur.png"),
            intervals: vec![],
            out_dir: PathBuf::from("samples"),
            steps: 50,
            guidance: 1.1,
            contact_sheet: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalCmdConfig {
    /// Corpus directory (with index.json) or a single task directory.
    pub tasks_dir: PathBuf,
    /// Predictions: per-task subdirectories of frame PNGs.
    pub preds_dir: PathBuf,
    pub out_dir: PathBuf,
    /// "present", "past_present_future", or "exposure_control/<tag>".
    pub protocol: String,
    /// SSIM patch edge.
    pub ssim_patch: usize,
    /// Compute end-point error with the analytic flow oracle
    /// (requires a corpus with recorded scene seeds).
    pub epe_analytic: bool,
}

impl Default for EvalCmdConfig {
    fn default() -> Self {
        Self {
            tasks_dir: PathBuf::from("corpus"),
            preds_dir: PathBuf::from("samples"),
            out_dir: PathBuf::from("eval"),
            protocol: "present".into(),
            ssim_patch: 32,
            epe_analytic: false,
        }
    }
}
