//! Command-line surface: corpus generation, blur synthesis from frame
//! folders, training, sampling, and protocol evaluation.
//!
//! Exit codes: 0 success, 2 configuration/validation error, 1 runtime
//! failure. Every command writes a `resolved_config.json` snapshot; a
//! rerun from the snapshot and seed reproduces the outputs byte for byte
//! (no timestamps are written).

pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::blur::{BlurMode, ExposureInterval};
use crate::dataset::{
    ingest_clip, read_task, sample_scene, write_corpus, write_task, CorpusIndex,
    DuplicateInterpolator, FrameInterpolator, LerpInterpolator, RenderedFlowOracle,
};
use crate::diffusion::{
    checkpoint_load, checkpoint_save, sample, train_step, ModelState, NoiseSchedule,
    SamplerConfig,
};
use crate::error::{Error, Result};
use crate::img::{load_png, save_png, Image};
use crate::metrics::{run_protocol, EvalVideo, ProtocolSpec, PatchGrid};
use config::*;

#[derive(Parser)]
#[command(
    name = "blurkit",
    about = "Motion-blur formation, exposure-conditioned video diffusion, and bidirectional evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural blur-task corpus.
    GenData(GenDataArgs),
    /// Synthesize a blur task from a clip folder.
    MakeBlur(MakeBlurArgs),
    /// Train the conditional video diffusion model.
    Train(TrainArgs),
    /// Sample video frames from a blurred image.
    Sample(SampleArgs),
    /// Run a metric protocol over predictions.
    Eval(EvalArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of tasks to generate.
    #[arg(long)]
    n: Option<u64>,
}

#[derive(Args)]
struct MakeBlurArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Clip folder with manifest.json.
    #[arg(long)]
    clip: Option<PathBuf>,
    /// Generation mode: present:<targets>, long-blur:<sources>, or
    /// ppf:<targets>/<capture>.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus directory.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Training steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Resume from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint file.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Blurred input: PNG file or task directory.
    #[arg(long)]
    blur: Option<PathBuf>,
    /// Inline interval list, e.g. "[[-0.5,0.0],[0.0,0.5]]".
    #[arg(long)]
    intervals: Option<String>,
    /// Diffusion steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Classifier-free guidance scale.
    #[arg(long)]
    guidance: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Tasks directory (corpus or single task).
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Predictions directory.
    #[arg(long)]
    preds: Option<PathBuf>,
    /// Protocol tag.
    #[arg(long)]
    protocol: Option<String>,
    /// SSIM patch edge.
    #[arg(long)]
    patch: Option<usize>,
    /// Score end-point error with the analytic flow oracle.
    #[arg(long)]
    epe: bool,
}

/// Entry point: parses, dispatches, maps errors to exit codes.
pub fn run() -> i32 {
    if let Ok(n) = std::env::var("BLURKIT_NUM_WORKERS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::MakeBlur(args) => cmd_make_blur(args),
        Command::Train(args) => cmd_train(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let mut cfg: GenDataConfig = load_config(args.common.config.as_ref())?;
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.common.out {
        cfg.out_dir = out;
    }
    if let Some(n) = args.n {
        cfg.n_tasks = n;
    }
    cfg.corpus.validate()?;
    write_snapshot(&cfg, &cfg.out_dir)?;
    let index = write_corpus(&cfg.out_dir, &cfg.corpus, cfg.seed, cfg.n_tasks)?;
    println!("wrote {} tasks to {} (sha256 {})", index.n_tasks, cfg.out_dir.display(), index.sha256);
    Ok(())
}

fn parse_mode(spec: &str) -> Result<BlurMode> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("mode spec '{spec}' needs kind:params")))?;
    let bad = |m: &str| Error::Config(format!("bad mode spec '{m}'"));
    match kind {
        "present" => Ok(BlurMode::Present { targets: rest.parse().map_err(|_| bad(spec))? }),
        "long-blur" => Ok(BlurMode::LongBlur { source_frames: rest.parse().map_err(|_| bad(spec))? }),
        "ppf" => {
            let (t, c) = rest.split_once('/').ok_or_else(|| bad(spec))?;
            Ok(BlurMode::PastPresentFuture {
                targets: t.parse().map_err(|_| bad(spec))?,
                capture_frames: c.parse().map_err(|_| bad(spec))?,
            })
        }
        _ => Err(bad(spec)),
    }
}

fn cmd_make_blur(args: MakeBlurArgs) -> Result<()> {
    let mut cfg: MakeBlurConfig = load_config(args.common.config.as_ref())?;
    if let Some(out) = args.common.out {
        cfg.out_dir = out;
    }
    if let Some(clip) = args.clip {
        cfg.clip_dir = clip;
    }
    if let Some(mode) = args.mode.as_deref() {
        cfg.mode = parse_mode(mode)?;
    }
    let hook: Option<Box<dyn FrameInterpolator>> = match cfg.interpolator.as_deref() {
        None => None,
        Some("duplicate") => Some(Box::new(DuplicateInterpolator)),
        Some("lerp") => Some(Box::new(LerpInterpolator)),
        Some(other) => {
            return Err(Error::Config(format!("unknown interpolator '{other}'")))
        }
    };
    let clip = ingest_clip(&cfg.clip_dir, cfg.upsample, hook.as_deref())?;
    let capture_len = if cfg.capture_len == 0 { clip.len() - cfg.capture_start } else { cfg.capture_len };
    let params = crate::blur::TaskParams {
        mode: cfg.mode,
        capture_start: cfg.capture_start,
        capture_len,
        response: cfg.response,
    };
    let mut task = crate::blur::synthesize_blur_task(&clip, &params)?;
    task.fps_native = Some(1.0 / clip.interval(0).duration() / cfg.upsample as f64);
    write_snapshot(&cfg, &cfg.out_dir)?;
    write_task(&cfg.out_dir, &task)?;
    println!(
        "wrote blur task ({} targets) to {}",
        task.intervals.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

/// Task names bucketed by target count, with intervals read from the
/// lightweight JSON records only.
fn bucket_tasks(corpus_dir: &Path, index: &CorpusIndex) -> Result<Vec<Vec<String>>> {
    use std::collections::BTreeMap;
    let mut buckets: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for name in &index.tasks {
        let path = corpus_dir.join(name).join("task.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let record: crate::dataset::TaskRecord =
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        buckets.entry(record.intervals.len()).or_default().push(name.clone());
    }
    Ok(buckets.into_values().collect())
}

fn splitmix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    use rand::{Rng, SeedableRng};
    let mut cfg: TrainCmdConfig = load_config(args.common.config.as_ref())?;
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.common.out {
        cfg.out_dir = out;
    }
    if let Some(corpus) = args.corpus {
        cfg.corpus_dir = corpus;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(resume) = args.resume {
        cfg.resume = Some(resume);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    write_snapshot(&cfg, &cfg.out_dir)?;

    let index = CorpusIndex::load(&cfg.corpus_dir)?;
    let buckets = bucket_tasks(&cfg.corpus_dir, &index)?;
    if buckets.is_empty() {
        return Err(Error::Config("corpus has no tasks".into()));
    }

    let mut state = match &cfg.resume {
        Some(path) => checkpoint_load(path)?,
        None => ModelState::new(
            cfg.denoiser.clone(),
            cfg.encoder.clone(),
            NoiseSchedule::linear(
                cfg.schedule.t_steps,
                cfg.schedule.beta_start,
                cfg.schedule.beta_end,
            )?,
            cfg.seed,
        )?,
    };

    let log_path = cfg.out_dir.join("log.jsonl");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let final_path = cfg.out_dir.join("model.ckpt");

    let start = state.step;
    let mut last_good: Option<PathBuf> = None;
    for step in start..cfg.steps {
        // Stateless per-step batch selection (resume-safe).
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ 0xBA7C, step));
        let bucket = &buckets[rng.gen_range(0..buckets.len())];
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let name = &bucket[rng.gen_range(0..bucket.len())];
            batch.push(read_task(&cfg.corpus_dir.join(name))?);
        }
        let stats = match train_step(&mut state, &batch, &cfg.optimizer) {
            Ok(stats) => stats,
            Err(e) => {
                eprintln!(
                    "aborting at step {step}: {e}; last good checkpoint: {}",
                    last_good
                        .as_deref()
                        .map(|p| p.display().to_string())
                        .unwrap_or_else(|| "none".into())
                );
                return Err(e);
            }
        };
        use std::io::Write;
        let line = serde_json::to_string(&stats)
            .map_err(|e| Error::json(&log_path, e))?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
            let path = cfg.out_dir.join(format!("ckpt_{:06}.ckpt", state.step));
            checkpoint_save(&state, &path)?;
            last_good = Some(path);
        }
    }
    checkpoint_save(&state, &final_path)?;
    println!("trained to step {}; checkpoint at {}", state.step, final_path.display());
    Ok(())
}

fn load_blur_input(path: &Path) -> Result<Image> {
    if path.is_dir() {
        load_png(&path.join("blur.png"))
    } else {
        load_png(path)
    }
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let mut cfg: SampleCmdConfig = load_config(args.common.config.as_ref())?;
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.common.out {
        cfg.out_dir = out;
    }
    if let Some(ckpt) = args.checkpoint {
        cfg.checkpoint = ckpt;
    }
    if let Some(blur) = args.blur {
        cfg.blur = blur;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(guidance) = args.guidance {
        cfg.guidance = guidance;
    }
    if let Some(text) = args.intervals.as_deref() {
        cfg.intervals = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("bad --intervals JSON: {e}")))?;
    }
    let intervals = cfg
        .intervals
        .iter()
        .enumerate()
        .map(|(i, &[s, e])| {
            ExposureInterval::new(s, e).map_err(|_| {
                Error::Config(format!("interval {i} invalid: [{s}, {e}]"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_snapshot(&cfg, &cfg.out_dir)?;

    let state = checkpoint_load(&cfg.checkpoint)?;
    let blur = load_blur_input(&cfg.blur)?;
    let sampler = SamplerConfig {
        steps: cfg.steps,
        guidance_scale: cfg.guidance,
        seed: cfg.seed,
    };
    let frames = sample(&blur, &intervals, &state, &sampler)?;
    for (i, frame) in frames.frames().iter().enumerate() {
        save_png(frame, &cfg.out_dir.join(format!("frame_{i:03}.png")))?;
    }
    let sidecar = serde_json::json!({
        "intervals": cfg.intervals,
        "seed": cfg.seed,
        "steps": cfg.steps,
        "guidance": cfg.guidance,
    });
    let sidecar_path = cfg.out_dir.join("task.json");
    std::fs::write(
        &sidecar_path,
        serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json(&sidecar_path, e))?,
    )
    .map_err(|e| Error::io(&sidecar_path, e))?;
    if cfg.contact_sheet {
        let (h, w, c) = frames.frame_dim();
        let mut sheet = ndarray::Array3::zeros((h, w * frames.len(), c));
        for (i, f) in frames.frames().iter().enumerate() {
            sheet
                .slice_mut(ndarray::s![.., i * w..(i + 1) * w, ..])
                .assign(f);
        }
        save_png(&sheet, &cfg.out_dir.join("contact_sheet.png"))?;
    }
    println!("wrote {} frames to {}", frames.len(), cfg.out_dir.display());
    Ok(())
}

/// Loads prediction frames `frame_NNN.png` from a directory.
fn load_pred_frames(dir: &Path, count: usize) -> Result<Vec<Image>> {
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        frames.push(load_png(&dir.join(format!("frame_{i:03}.png")))?);
    }
    Ok(frames)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg: EvalCmdConfig = load_config(args.common.config.as_ref())?;
    if let Some(out) = args.common.out {
        cfg.out_dir = out;
    }
    if let Some(tasks) = args.tasks {
        cfg.tasks_dir = tasks;
    }
    if let Some(preds) = args.preds {
        cfg.preds_dir = preds;
    }
    if let Some(protocol) = args.protocol {
        cfg.protocol = protocol;
    }
    if let Some(patch) = args.patch {
        cfg.ssim_patch = patch;
    }
    if args.epe {
        cfg.epe_analytic = true;
    }
    write_snapshot(&cfg, &cfg.out_dir)?;

    // Corpus directory or single task.
    let (names, corpus_index) = if cfg.tasks_dir.join("index.json").is_file() {
        let index = CorpusIndex::load(&cfg.tasks_dir)?;
        (index.tasks.clone(), Some(index))
    } else if cfg.tasks_dir.join("task.json").is_file() {
        (vec![String::from(".")], None)
    } else {
        return Err(Error::Config(format!(
            "{} is neither a corpus nor a task directory",
            cfg.tasks_dir.display()
        )));
    };

    let mut spec = match cfg.protocol.as_str() {
        "present" => ProtocolSpec::present(),
        "past_present_future" => ProtocolSpec::past_present_future(),
        other => {
            if let Some(tag) = other.strip_prefix("exposure_control/") {
                ProtocolSpec::exposure_control(tag)
            } else {
                return Err(Error::Config(format!("unknown protocol '{other}'")));
            }
        }
    };
    spec.ssim_grid = PatchGrid { height: cfg.ssim_patch, width: cfg.ssim_patch };

    let mut tasks = Vec::new();
    for name in &names {
        let dir = if name == "." { cfg.tasks_dir.clone() } else { cfg.tasks_dir.join(name) };
        let task = read_task(&dir)?;
        let pred_dir = if name == "." {
            cfg.preds_dir.clone()
        } else {
            let id = Path::new(name)
                .file_name()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| name.clone());
            cfg.preds_dir.join(id)
        };
        let pred_frames = load_pred_frames(&pred_dir, task.intervals.len())?;
        tasks.push((name.clone(), task, pred_frames));
    }

    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for (_, task, pred_frames) in &tasks {
        let gt = task
            .target_sequence()?
            .ok_or_else(|| Error::Config("task has no ground-truth targets".into()))?;
        let pred = crate::blur::FrameSequence::new(
            pred_frames.clone(),
            task.intervals.clone(),
            task.color_space,
        )?;
        gts.push(gt);
        preds.push(pred);
    }

    let mut oracles: Vec<Option<RenderedFlowOracle>> = Vec::new();
    for (i, (name, task, _)) in tasks.iter().enumerate() {
        let oracle = if cfg.epe_analytic {
            match (&corpus_index, task.scene_seed) {
                (Some(index), Some(scene_seed)) => {
                    let scene = sample_scene(&index.config, scene_seed);
                    let times: Vec<f64> =
                        task.intervals.iter().map(|iv| iv.midpoint()).collect();
                    let candidates = task.targets.clone().ok_or_else(|| {
                        Error::Config("analytic EPE needs ground-truth targets".into())
                    })?;
                    Some(RenderedFlowOracle::from_candidates(scene, times, candidates)?)
                }
                _ => {
                    return Err(Error::Config(
                        "analytic EPE needs a corpus index and recorded scene seeds".into(),
                    ))
                }
            }
        } else {
            None
        };
        oracles.push(oracle);
        let _ = (name, i);
    }
    let mut videos = Vec::new();
    for (i, (name, task, _)) in tasks.iter().enumerate() {
        videos.push(EvalVideo {
            label: name.clone(),
            blur: &task.blur,
            blur_space: task.color_space,
            gt: &gts[i],
            pred: &preds[i],
            flow_fn: oracles[i].as_ref().map(|o| {
                Box::new(o.flow_fn()) as Box<dyn Fn(&Image, &Image) -> ndarray::Array3<f64>>
            }),
        });
    }

    let report = run_protocol(&spec, &videos, &[])?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    report.write_json(&cfg.out_dir.join("report.json"))?;
    report.write_csv(&cfg.out_dir.join("report.csv"))?;
    println!(
        "evaluated {} videos under '{}'; aggregates: {:?}",
        report.count, report.protocol, report.aggregates
    );
    Ok(())
}
