// Scratch calibration harness (not part of the deliverable): times the
// criterion-6 training loop and probes post-training quality.
use blurkit::blur::{BlurMode, ExposureInterval};
use blurkit::dataset::{diff_centroid, generate_task, CorpusConfig, SceneFamily};
use blurkit::diffusion::{
    sample, train_step, ModelState, NoiseSchedule, SamplerConfig, TrainConfig,
};
use blurkit::encoding::EncoderConfig;
use blurkit::diffusion::DenoiserConfig;
use blurkit::img::psnr;
use blurkit::metrics::{blur_consistency_psnr, PSNR_CAP};
use std::time::Instant;

fn main() {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let lr: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let corpus = CorpusConfig {
        canvas: (64, 64),
        mode_mix: blurkit::dataset::ModeMix {
            present: 0.6,
            long_blur: 0.0,
            past_present_future: 0.4,
        },
        present_targets: (4, 8),
        ppf_capture: (2, 6),
        ppf_targets: (4, 8),
        family: SceneFamily {
            objects: (1, 1),
            speed: (6.0, 12.0),
            axis_aligned: true,
            allow_rotation: false,
            size: (10.0, 20.0),
        },
        ..CorpusConfig::default()
    };
    let n_train = 2000u64;
    let mut state = ModelState::new(
        DenoiserConfig::default(),
        EncoderConfig::default(),
        NoiseSchedule::default(),
        7,
    )
    .unwrap();
    println!("params: {}", state.params.param_count());
    let mut tcfg = TrainConfig { lr, ..TrainConfig::default() };
    let mut losses = Vec::new();
    let t0 = Instant::now();
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let batch_size = 3usize;
    for step in 0..steps {
        tcfg.lr = blurkit::diffusion::cosine_lr(lr, lr * 0.1, step, steps);
        let i1 = rng.gen_range(0..n_train);
        let t1 = generate_task(&corpus, 11, i1).unwrap().task;
        let mut batch = vec![t1];
        while batch.len() < batch_size {
            let i2 = rng.gen_range(0..n_train);
            let t = generate_task(&corpus, 11, i2).unwrap().task;
            if t.intervals.len() == batch[0].intervals.len() {
                batch.push(t);
            }
        }
        let s = train_step(&mut state, &batch, &tcfg).unwrap();
        losses.push(s.loss);
        if step % 100 == 0 || step + 1 == steps {
            let recent = &losses[losses.len().saturating_sub(50)..];
            println!(
                "step {step}: loss {:.5} (recent mean {:.5}) elapsed {:.1}s",
                s.loss,
                recent.iter().sum::<f64>() / recent.len() as f64,
                t0.elapsed().as_secs_f64()
            );
        }
    }
    let train_time = t0.elapsed().as_secs_f64();
    println!("train: {steps} steps in {train_time:.1}s ({:.3}s/step)", train_time / steps as f64);

    // Direct denoiser fidelity probe (no sampler): PSNR of the one-step
    // prediction against gt at a few noise levels.
    use blurkit::diffusion::{conditioning_groups, denoise, target_video};
    for &t in &[200usize, 500, 800] {
        let mut ps = Vec::new();
        for i in 0..6u64 {
            let gen = generate_task(&corpus, 11, 2000 + i).unwrap();
            let task = &gen.task;
            let x0 = target_video(task).unwrap();
            use rand::SeedableRng as _;
            use rand_distr::Distribution as _;
            let mut nrng = rand_chacha::ChaCha8Rng::seed_from_u64(500 + i);
            let noise = ndarray::Array4::from_shape_fn(x0.dim(), |_| {
                rand_distr::StandardNormal.sample(&mut nrng)
            });
            let xt = blurkit::diffusion::q_sample(&x0, t, &noise, &state.schedule).unwrap();
            let cond = task.blur.mapv(|v| 2.0 * v - 1.0);
            let groups = conditioning_groups(&task.intervals, 1).unwrap();
            let xhat = denoise(&state.model, &state.params, &state.schedule, &xt, Some(&cond), &groups, t).unwrap();
            let err = (&xhat - &x0).mapv(|v| v * v).mean().unwrap();
            // [-1,1] scale: MSE 4x the [0,1] scale.
            ps.push(-10.0 * (err / 4.0).log10());
        }
        println!("one-step x0 fidelity at t={t}: mean {:.2} dB", ps.iter().sum::<f64>() / ps.len() as f64);
    }

    // Identity-interval probe on held-out tasks.
    let t0 = Instant::now();
    let mut id_psnrs = Vec::new();
    let mut bc_psnrs = Vec::new();
    let mut dir_ok = 0;
    let n_eval = 10u64;
    for i in 0..n_eval {
        let gen = generate_task(&corpus, 11, n_train + i).unwrap();
        let task = &gen.task;
        let sampler = SamplerConfig { steps: 50, guidance_scale: 1.1, seed: 1000 + i };
        // (a) single target spanning the full exposure, at several
        // guidance scales.
        for (k, gs) in [1.0, 1.1, 1.5].into_iter().enumerate() {
            let s2 = SamplerConfig { guidance_scale: gs, ..sampler };
            let id = sample(&task.blur, &[ExposureInterval::unit()], &state, &s2).unwrap();
            let v = psnr(id.frame(0), &task.blur, PSNR_CAP);
            if k == 1 {
                id_psnrs.push(v);
            }
            if i < 4 {
                println!("  task {i} identity psnr at gs={gs}: {v:.2}");
            }
        }
        // (b) present-mode frames at the task's own intervals.
        let out = sample(&task.blur, &task.intervals, &state, &sampler).unwrap();
        bc_psnrs.push(blur_consistency_psnr(&task.blur, task.color_space, &out).unwrap());
        // (c) dominant centroid axis vs scene velocity axis.
        let scene = &gen.scene;
        let empty = blurkit::dataset::SceneSpec { objects: vec![], ..scene.clone() };
        let bg = empty.background();
        let c0 = diff_centroid(out.frame(0), &bg);
        let c1 = diff_centroid(out.frame(out.len() - 1), &bg);
        if let (Some(a), Some(b)) = (c0, c1) {
            let dx = (b[0] - a[0]).abs();
            let dy = (b[1] - a[1]).abs();
            let v = scene.objects[0].velocity;
            let horizontal = v[0].abs() > v[1].abs();
            if (horizontal && dx > dy) || (!horizontal && dy > dx) {
                dir_ok += 1;
            }
        }
        let _ = task.mode;
        if matches!(task.mode, BlurMode::Present { .. }) {}
    }
    println!(
        "eval ({n_eval} tasks, {:.1}s): identity-psnr mean {:.2} min {:.2}; blur-consistency mean {:.2} min {:.2}; direction {}/{}",
        t0.elapsed().as_secs_f64(),
        id_psnrs.iter().sum::<f64>() / id_psnrs.len() as f64,
        id_psnrs.iter().cloned().fold(f64::INFINITY, f64::min),
        bc_psnrs.iter().sum::<f64>() / bc_psnrs.len() as f64,
        bc_psnrs.iter().cloned().fold(f64::INFINITY, f64::min),
        dir_ok,
        n_eval
    );
}
