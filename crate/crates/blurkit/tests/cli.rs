//! CLI integration: every command end to end on tiny inputs, exit codes,
//! and byte-identical reruns from the resolved-config snapshot.

use std::path::Path;
use std::process::{Command, Output};

fn blurkit(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_blurkit"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tiny_gen_config(dir: &Path, n: u64) -> String {
    let cfg = serde_json::json!({
        "seed": 7,
        "n_tasks": n,
        "out_dir": dir.join("corpus"),
        "corpus": {
            "canvas": [16, 16],
            "present_targets": [4, 4],
            "family": {
                "objects": [1, 1],
                "speed": [2.0, 4.0],
                "size": [5.0, 8.0]
            }
        }
    });
    let path = dir.join("gen.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn tiny_train_config(dir: &Path, steps: u64) -> String {
    let cfg = serde_json::json!({
        "seed": 3,
        "corpus_dir": dir.join("corpus"),
        "out_dir": dir.join("run"),
        "steps": steps,
        "batch_size": 2,
        "optimizer": { "lr": 1e-3 },
        "denoiser": {
            "patch": 4, "width": 16, "depth": 1, "heads": 2,
            "frame_height": 16, "frame_width": 16, "max_frames": 8
        },
        "encoder": {
            "frequencies": [1.0, 2.0], "output_width": 16,
            "scheme": "per_interval", "group_size": 1
        },
        "checkpoint_every": 5
    });
    let path = dir.join("train.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn dir_digest(dir: &Path, skip: &[&str]) -> Vec<(String, Vec<u8>)> {
    let mut entries = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                if skip.iter().any(|s| rel.contains(s)) {
                    continue;
                }
                entries.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    entries.sort();
    entries
}

#[test]
fn full_cli_round_trip_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let env = [("BLURKIT_NUM_WORKERS", "1")];

    // gen-data twice into separate dirs: identical bytes.
    let gen_cfg = tiny_gen_config(dir, 4);
    assert_success(&blurkit(&["gen-data", "--config", &gen_cfg], &env));
    let corpus_a = dir_digest(&dir.join("corpus"), &[]);
    std::fs::remove_dir_all(dir.join("corpus")).unwrap();
    assert_success(&blurkit(&["gen-data", "--config", &gen_cfg], &env));
    let corpus_b = dir_digest(&dir.join("corpus"), &[]);
    assert_eq!(corpus_a, corpus_b, "gen-data must be byte-reproducible");
    assert!(dir.join("corpus/resolved_config.json").is_file());
    assert!(dir.join("corpus/index.json").is_file());

    // train: 10-step smoke run completes and writes a checkpoint.
    let train_cfg = tiny_train_config(dir, 10);
    assert_success(&blurkit(&["train", "--config", &train_cfg], &env));
    let ckpt = dir.join("run/model.ckpt");
    assert!(ckpt.is_file());
    let log = std::fs::read_to_string(dir.join("run/log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 10);
    // Deterministic loss trajectory under a fixed seed.
    let run_a = std::fs::read(&ckpt).unwrap();
    std::fs::remove_dir_all(dir.join("run")).unwrap();
    assert_success(&blurkit(&["train", "--config", &train_cfg], &env));
    let run_b = std::fs::read(&ckpt).unwrap();
    assert_eq!(run_a, run_b, "training must be byte-reproducible");

    // resume: continue the step counter from a periodic checkpoint.
    assert_success(&blurkit(
        &[
            "train",
            "--config",
            &train_cfg,
            "--resume",
            dir.join("run/ckpt_000005.ckpt").to_str().unwrap(),
            "--steps",
            "12",
            "--out",
            dir.join("run2").to_str().unwrap(),
        ],
        &env,
    ));
    let log2 = std::fs::read_to_string(dir.join("run2/log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log2.lines().next().unwrap()).unwrap();
    assert_eq!(first["step"], 6, "resume must continue the step counter");

    // sample: 4-frame request -> 4 PNGs + sidecar; reruns identical.
    let blur_dir = dir.join("corpus/tasks/000000");
    let out1 = dir.join("samples/000000");
    let out1s = out1.to_string_lossy().into_owned();
    let args: Vec<&str> = vec![
        "sample",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--blur",
        blur_dir.to_str().unwrap(),
        "--intervals",
        "[[-0.5,-0.25],[-0.25,0.0],[0.0,0.25],[0.25,0.5]]",
        "--steps",
        "5",
        "--seed",
        "9",
        "--out",
        &out1s,
    ];
    assert_success(&blurkit(&args, &env));
    for i in 0..4 {
        assert!(out1.join(format!("frame_{i:03}.png")).is_file());
    }
    let sampled_a = dir_digest(&out1, &[]);
    std::fs::remove_dir_all(&out1).unwrap();
    assert_success(&blurkit(&args, &env));
    let sampled_b = dir_digest(&out1, &[]);
    assert_eq!(sampled_a, sampled_b, "sampling must be byte-reproducible");

    // eval with identity predictions: copy ground truth as predictions
    // for every task, expect the capped PSNR.
    let preds = dir.join("preds");
    for entry in std::fs::read_dir(dir.join("corpus/tasks")).unwrap() {
        let task_dir = entry.unwrap().path();
        let id = task_dir.file_name().unwrap().to_string_lossy().into_owned();
        let pdir = preds.join(&id);
        std::fs::create_dir_all(&pdir).unwrap();
        for i in 0.. {
            let src = task_dir.join("targets").join(format!("{i:03}.png"));
            if !src.is_file() {
                break;
            }
            std::fs::copy(&src, pdir.join(format!("frame_{i:03}.png"))).unwrap();
        }
    }
    assert_success(&blurkit(
        &[
            "eval",
            "--tasks",
            dir.join("corpus").to_str().unwrap(),
            "--preds",
            preds.to_str().unwrap(),
            "--protocol",
            "present",
            "--patch",
            "8",
            "--epe",
            "--out",
            dir.join("eval").to_str().unwrap(),
        ],
        &env,
    ));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("eval/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["count"], 4);
    assert_eq!(report["aggregates"]["psnr_p"], 100.0);
    assert_eq!(report["aggregates"]["epe"], 0.0);
    assert!(dir.join("eval/report.csv").is_file());
}

#[test]
fn validation_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let env = [("BLURKIT_NUM_WORKERS", "1")];

    // Invalid mode mix -> exit 2.
    let cfg = serde_json::json!({
        "seed": 1,
        "n_tasks": 1,
        "out_dir": dir.join("c"),
        "corpus": { "mode_mix": { "present": 0.5, "long_blur": 0.1, "past_present_future": 0.1 } }
    });
    let path = dir.join("bad.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = blurkit(&["gen-data", "--config", path.to_str().unwrap()], &env);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // Unknown config keys are rejected.
    let cfg = serde_json::json!({ "seed": 1, "bogus_key": true });
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = blurkit(&["gen-data", "--config", path.to_str().unwrap()], &env);
    assert_eq!(out.status.code(), Some(2));

    // Invalid interval spec -> exit 2 naming the pair.
    let out = blurkit(
        &[
            "sample",
            "--checkpoint",
            "/nonexistent.ckpt",
            "--intervals",
            "[[0.5,0.2]]",
        ],
        &env,
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("interval 0"), "stderr: {err}");

    // Runtime failure (missing checkpoint) -> exit 1.
    let out = blurkit(
        &[
            "sample",
            "--checkpoint",
            "/nonexistent.ckpt",
            "--intervals",
            "[[-0.5,0.5]]",
        ],
        &env,
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn make_blur_from_clip_folder() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let env = [("BLURKIT_NUM_WORKERS", "1")];

    // Write a 16-frame clip folder.
    let clip = dir.join("clip");
    std::fs::create_dir_all(&clip).unwrap();
    let names: Vec<String> = (0..16).map(|i| format!("{i:04}.png")).collect();
    for (i, name) in names.iter().enumerate() {
        let img = ndarray::Array3::from_shape_fn((8, 8, 3), |(y, x, _)| {
            ((i + y + x) % 16) as f64 / 16.0
        });
        blurkit::img::save_png(&img, &clip.join(name)).unwrap();
    }
    std::fs::write(
        clip.join("manifest.json"),
        serde_json::json!({ "fps": 240.0, "color_space": "srgb", "frames": names }).to_string(),
    )
    .unwrap();

    // Present mode, 16 targets.
    let out = blurkit(
        &[
            "make-blur",
            "--clip",
            clip.to_str().unwrap(),
            "--mode",
            "present:16",
            "--out",
            dir.join("task").to_str().unwrap(),
        ],
        &env,
    );
    assert_success(&out);
    let task = blurkit::dataset::read_task(&dir.join("task")).unwrap();
    assert_eq!(task.intervals.len(), 16);
    assert!(dir.join("task/blur.png").is_file());

    // Dead-time mode on a 16-frame clip cannot align: exit 2.
    let out = blurkit(
        &[
            "make-blur",
            "--clip",
            clip.to_str().unwrap(),
            "--mode",
            "long-blur:32",
            "--out",
            dir.join("task2").to_str().unwrap(),
        ],
        &env,
    );
    assert_eq!(out.status.code(), Some(2));
}
