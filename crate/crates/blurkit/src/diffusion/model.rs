//! Exposure-conditioned video denoiser: a patchified space-time
//! transformer over the condition frame and the noised target frames,
//! with hand-written backward passes for every layer.
//!
//! Latent layout: latent frame 0 is the condition image (replicated over
//! the g channel groups), latent frames 1..=F/g pack g consecutive target
//! frames along channels. Interval embeddings are added per latent frame,
//! position codes per (slot, patch), and a projected sinusoidal code of
//! the diffusion step to every token.
//!
//! The network predicts the clean video (x0-prediction) directly at
//! every noise level.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffusion::params::ParamSet;
use crate::diffusion::schedule::NoiseSchedule;
use crate::encoding::{
    encode_group_with, gamma_features, position_encoding, replicate_input_interval,
    EncoderConfig, EncodingScheme, IntervalGroup, PositionGrid,
};
use crate::error::{Error, Result};
use crate::img::Image;

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    /// Spatial patch edge, px.
    pub patch: usize,
    /// Token width D̃.
    pub width: usize,
    /// Transformer blocks.
    pub depth: usize,
    /// Attention heads.
    pub heads: usize,
    /// Physical frames per latent frame (g).
    pub group_size: usize,
    /// Maximum physical target frames.
    pub max_frames: usize,
    /// Image channels.
    pub channels: usize,
    pub frame_height: usize,
    pub frame_width: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            width: 64,
            depth: 4,
            heads: 4,
            group_size: 1,
            max_frames: 16,
            channels: 3,
            frame_height: 64,
            frame_width: 64,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0
            || self.width == 0
            || self.depth == 0
            || self.heads == 0
            || self.group_size == 0
            || self.max_frames == 0
            || self.channels == 0
        {
            return Err(Error::Config("denoiser dimensions must be positive".into()));
        }
        if !self.frame_height.is_multiple_of(self.patch) || !self.frame_width.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "frame {}×{} not divisible by patch {}",
                self.frame_height, self.frame_width, self.patch
            )));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if !self.max_frames.is_multiple_of(self.group_size) {
            return Err(Error::Config(format!(
                "max_frames {} not divisible by group size {}",
                self.max_frames, self.group_size
            )));
        }
        if !self.width.is_multiple_of(2) || self.width < 6 {
            return Err(Error::Config("width must be even and >= 6".into()));
        }
        Ok(())
    }

    pub fn token_dim(&self) -> usize {
        self.patch * self.patch * self.channels * self.group_size
    }

    pub fn patch_rows(&self) -> usize {
        self.frame_height / self.patch
    }

    pub fn patch_cols(&self) -> usize {
        self.frame_width / self.patch
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.patch_rows() * self.patch_cols()
    }

    /// Latent frame slots including the condition slot.
    pub fn max_latent_frames(&self) -> usize {
        self.max_frames / self.group_size + 1
    }
}

/// The denoiser: static configuration plus precomputed position codes.
/// Parameters live in a [`ParamSet`] so gradients, optimizer moments, and
/// checkpoints share one layout.
#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    enc: EncoderConfig,
    /// Position codes per latent slot: (tokens_per_frame × width).
    pos_table: Vec<Array2<f64>>,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig, enc: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        enc.validate()?;
        if enc.scheme != EncodingScheme::PerInterval {
            return Err(Error::Config(
                "denoiser conditioning uses the per-interval scheme".into(),
            ));
        }
        if enc.output_width != cfg.width {
            return Err(Error::Config(format!(
                "interval embedding width {} must match token width {}",
                enc.output_width, cfg.width
            )));
        }
        if enc.group_size != cfg.group_size {
            return Err(Error::Config(format!(
                "encoder group size {} must match denoiser group size {}",
                enc.group_size, cfg.group_size
            )));
        }
        let grid = PositionGrid {
            frames: cfg.max_latent_frames(),
            rows: cfg.patch_rows(),
            cols: cfg.patch_cols(),
            width: cfg.width,
        };
        let mut pos_table = Vec::with_capacity(grid.frames);
        for f in 0..grid.frames {
            let mut table = Array2::zeros((cfg.tokens_per_frame(), cfg.width));
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    let code = position_encoding(f, r, c, &grid)?;
                    table.row_mut(r * grid.cols + c).assign(&code);
                }
            }
            pos_table.push(table);
        }
        Ok(Self { cfg, enc, pos_table })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.enc
    }

    /// Fresh parameters: 1/sqrt(fan-in) Gaussians for matrices, zero
    /// biases, unit LayerNorm gains, zero output head.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.cfg.width;
        let td = self.cfg.token_dim();
        let hidden = 4 * d;
        let iv_in = self.enc.input_width();
        let mut p = ParamSet::new();
        let mat = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            let normal = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("valid std");
            Array2::from_shape_fn((rows, cols), |_| normal.sample(rng)).into_dyn()
        };
        p.insert("embed.w", mat(&mut rng, td, d));
        p.insert("embed.b", Array1::zeros(d).into_dyn());
        p.insert("tproj.w", mat(&mut rng, d, d));
        p.insert("tproj.b", Array1::zeros(d).into_dyn());
        p.insert("ivproj.w", mat(&mut rng, iv_in, d));
        p.insert("ivproj.b", Array1::zeros(d).into_dyn());
        for i in 0..self.cfg.depth {
            let b = format!("blocks.{i}");
            p.insert(format!("{b}.ln1.g"), Array1::ones(d).into_dyn());
            p.insert(format!("{b}.ln1.b"), Array1::zeros(d).into_dyn());
            for name in ["wq", "wk", "wv", "wo"] {
                p.insert(format!("{b}.attn.{name}.w"), mat(&mut rng, d, d));
                p.insert(format!("{b}.attn.{name}.b"), Array1::zeros(d).into_dyn());
            }
            p.insert(format!("{b}.ln2.g"), Array1::ones(d).into_dyn());
            p.insert(format!("{b}.ln2.b"), Array1::zeros(d).into_dyn());
            p.insert(format!("{b}.mlp.fc1.w"), mat(&mut rng, d, hidden));
            p.insert(format!("{b}.mlp.fc1.b"), Array1::zeros(hidden).into_dyn());
            p.insert(format!("{b}.mlp.fc2.w"), mat(&mut rng, hidden, d));
            p.insert(format!("{b}.mlp.fc2.b"), Array1::zeros(d).into_dyn());
        }
        p.insert("final.ln.g", Array1::ones(d).into_dyn());
        p.insert("final.ln.b", Array1::zeros(d).into_dyn());
        p.insert("head.w", Array2::zeros((d, td)).into_dyn());
        p.insert("head.b", Array1::zeros(td).into_dyn());
        p
    }

    fn check_inputs(
        &self,
        cond: &Image,
        x_t: &Array4<f64>,
        groups: &[IntervalGroup],
        slots: &[usize],
    ) -> Result<usize> {
        let (f, h, w, c) = x_t.dim();
        let cfg = &self.cfg;
        if h != cfg.frame_height || w != cfg.frame_width || c != cfg.channels {
            return Err(Error::Shape(format!(
                "frames are {h}×{w}×{c}, model expects {}×{}×{}",
                cfg.frame_height, cfg.frame_width, cfg.channels
            )));
        }
        if cond.dim() != (h, w, c) {
            return Err(Error::Shape(format!(
                "condition is {:?}, frames are {:?}",
                cond.dim(),
                (h, w, c)
            )));
        }
        if f == 0 || f % cfg.group_size != 0 || f > cfg.max_frames {
            return Err(Error::Config(format!(
                "{f} frames incompatible with group size {} and max {}",
                cfg.group_size, cfg.max_frames
            )));
        }
        let latents = f / cfg.group_size;
        if groups.len() != latents + 1 {
            return Err(Error::Config(format!(
                "need {} interval groups (condition + targets), got {}",
                latents + 1,
                groups.len()
            )));
        }
        for (i, g) in groups.iter().enumerate() {
            if g.group_size() != cfg.group_size {
                return Err(Error::Config(format!(
                    "group {i} has size {}, expected {}",
                    g.group_size(),
                    cfg.group_size
                )));
            }
        }
        if slots.len() != latents + 1 {
            return Err(Error::Config(format!(
                "need {} slot indices, got {}",
                latents + 1,
                slots.len()
            )));
        }
        for &slot in slots {
            if slot >= cfg.max_latent_frames() {
                return Err(Error::Config(format!(
                    "slot {slot} outside the {}-slot grid",
                    cfg.max_latent_frames()
                )));
            }
        }
        Ok(latents)
    }

    /// Packs condition + target frames into the token patch matrix.
    fn patch_matrix(&self, cond: &Image, x_t: &Array4<f64>, latents: usize) -> Array2<f64> {
        let cfg = &self.cfg;
        let (p, ch, g) = (cfg.patch, cfg.channels, cfg.group_size);
        let np = cfg.tokens_per_frame();
        let cols = cfg.patch_cols();
        let mut pm = Array2::zeros(((latents + 1) * np, cfg.token_dim()));
        for lf in 0..=latents {
            for pr in 0..cfg.patch_rows() {
                for pc in 0..cols {
                    let row = lf * np + pr * cols + pc;
                    let mut col = 0;
                    for j in 0..g {
                        for py in 0..p {
                            for px in 0..p {
                                for cc in 0..ch {
                                    let y = pr * p + py;
                                    let x = pc * p + px;
                                    pm[[row, col]] = if lf == 0 {
                                        cond[[y, x, cc]]
                                    } else {
                                        x_t[[(lf - 1) * g + j, y, x, cc]]
                                    };
                                    col += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        pm
    }

    /// Scatters target-token head outputs back to frames.
    fn unpatchify(&self, y: &Array2<f64>, latents: usize) -> Array4<f64> {
        let cfg = &self.cfg;
        let (p, ch, g) = (cfg.patch, cfg.channels, cfg.group_size);
        let np = cfg.tokens_per_frame();
        let cols = cfg.patch_cols();
        let f = latents * g;
        let mut out = Array4::zeros((f, cfg.frame_height, cfg.frame_width, ch));
        for lf in 1..=latents {
            for pr in 0..cfg.patch_rows() {
                for pc in 0..cols {
                    let row = lf * np + pr * cols + pc;
                    let mut col = 0;
                    for j in 0..g {
                        for py in 0..p {
                            for px in 0..p {
                                for cc in 0..ch {
                                    out[[(lf - 1) * g + j, pr * p + py, pc * p + px, cc]] =
                                        y[[row, col]];
                                    col += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::unpatchify`]: frame gradients to head-output
    /// rows (condition rows stay zero).
    fn patchify_grad(&self, d_out: &Array4<f64>, latents: usize) -> Array2<f64> {
        let cfg = &self.cfg;
        let (p, ch, g) = (cfg.patch, cfg.channels, cfg.group_size);
        let np = cfg.tokens_per_frame();
        let cols = cfg.patch_cols();
        let mut dy = Array2::zeros(((latents + 1) * np, cfg.token_dim()));
        for lf in 1..=latents {
            for pr in 0..cfg.patch_rows() {
                for pc in 0..cols {
                    let row = lf * np + pr * cols + pc;
                    let mut col = 0;
                    for j in 0..g {
                        for py in 0..p {
                            for px in 0..p {
                                for cc in 0..ch {
                                    dy[[row, col]] =
                                        d_out[[(lf - 1) * g + j, pr * p + py, pc * p + px, cc]];
                                    col += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        dy
    }

    /// Sinusoidal code of the diffusion step index.
    fn t_code(&self, t: usize) -> Array1<f64> {
        let d = self.cfg.width;
        let pairs = d / 2;
        Array1::from_shape_fn(d, |i| {
            let j = i / 2;
            let omega = 10_000f64.powf(-(j as f64) / pairs as f64);
            let arg = t as f64 * omega;
            if i % 2 == 0 {
                arg.cos()
            } else {
                arg.sin()
            }
        })
    }

    /// One forward pass of the network (without the skip combination).
    /// `slots[i]` is the position slot of latent frame i (0 = condition);
    /// pass `None` for the natural 0..=F/g assignment.
    pub fn forward(
        &self,
        params: &ParamSet,
        cond: &Image,
        x_t: &Array4<f64>,
        groups: &[IntervalGroup],
        slots: Option<&[usize]>,
        t: usize,
        mut tape: Option<&mut Tape>,
    ) -> Result<Array4<f64>> {
        let default_slots: Vec<usize>;
        let slots = match slots {
            Some(s) => s,
            None => {
                default_slots = (0..=x_t.dim().0 / self.cfg.group_size).collect();
                &default_slots
            }
        };
        let latents = self.check_inputs(cond, x_t, groups, slots)?;
        if t == 0 {
            return Err(Error::Config("diffusion step t must be >= 1".into()));
        }
        let cfg = &self.cfg;
        let d = cfg.width;
        let np = cfg.tokens_per_frame();

        let pm = self.patch_matrix(cond, x_t, latents);
        let mut x = pm.dot(&params.mat("embed.w")) + params.vec1("embed.b");

        // Position codes per latent slot.
        for lf in 0..=latents {
            let table = &self.pos_table[slots[lf]];
            let mut rows = x.slice_mut(s![lf * np..(lf + 1) * np, ..]);
            rows += table;
        }

        // Diffusion-step embedding, broadcast to every token.
        let t_code = self.t_code(t);
        let t_emb = t_code.dot(&params.mat("tproj.w")) + params.vec1("tproj.b");
        for mut row in x.rows_mut() {
            row += &t_emb;
        }

        // Interval embeddings per latent frame.
        let mut gamma_feats = Vec::with_capacity(latents + 1);
        for (lf, group) in groups.iter().enumerate() {
            let emb = encode_group_with(
                group,
                &self.enc,
                params.mat("ivproj.w"),
                params.vec1("ivproj.b"),
            )?;
            let mut rows = x.slice_mut(s![lf * np..(lf + 1) * np, ..]);
            for mut r in rows.rows_mut() {
                r += &emb;
            }
            gamma_feats.push(gamma_features(group, &self.enc.frequencies));
        }

        if let Some(tp) = tape.as_deref_mut() {
            tp.p_matrix = pm;
            tp.gamma_feats = gamma_feats;
            tp.t_code = t_code;
            tp.blocks.clear();
            tp.latents = latents;
        }

        let heads = cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for i in 0..cfg.depth {
            let b = format!("blocks.{i}");
            let x_in = x;
            let (ln1_out, ln1_tape) = layer_norm(
                &x_in,
                params.vec1(&format!("{b}.ln1.g")),
                params.vec1(&format!("{b}.ln1.b")),
            );
            let q = ln1_out.dot(&params.mat(&format!("{b}.attn.wq.w")))
                + params.vec1(&format!("{b}.attn.wq.b"));
            let k = ln1_out.dot(&params.mat(&format!("{b}.attn.wk.w")))
                + params.vec1(&format!("{b}.attn.wk.b"));
            let v = ln1_out.dot(&params.mat(&format!("{b}.attn.wv.w")))
                + params.vec1(&format!("{b}.attn.wv.b"));
            let s_tokens = q.nrows();
            let mut attn = Array3::zeros((heads, s_tokens, s_tokens));
            let mut ctx = Array2::zeros((s_tokens, d));
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![.., cols.clone()]);
                let kh = k.slice(s![.., cols.clone()]);
                let vh = v.slice(s![.., cols.clone()]);
                let mut scores = qh.dot(&kh.t());
                scores *= scale;
                softmax_rows(&mut scores);
                let ctx_h = scores.dot(&vh);
                ctx.slice_mut(s![.., cols]).assign(&ctx_h);
                attn.index_axis_mut(Axis(0), h).assign(&scores);
            }
            let attn_out = ctx.dot(&params.mat(&format!("{b}.attn.wo.w")))
                + params.vec1(&format!("{b}.attn.wo.b"));
            let x_mid = &x_in + &attn_out;

            let (ln2_out, ln2_tape) = layer_norm(
                &x_mid,
                params.vec1(&format!("{b}.ln2.g")),
                params.vec1(&format!("{b}.ln2.b")),
            );
            let u = ln2_out.dot(&params.mat(&format!("{b}.mlp.fc1.w")))
                + params.vec1(&format!("{b}.mlp.fc1.b"));
            let (gelu_out, tanh_w) = gelu(&u);
            let mlp_out = gelu_out.dot(&params.mat(&format!("{b}.mlp.fc2.w")))
                + params.vec1(&format!("{b}.mlp.fc2.b"));
            x = &x_mid + &mlp_out;

            if let Some(tp) = tape.as_deref_mut() {
                tp.blocks.push(BlockTape {
                    ln1: ln1_tape,
                    ln1_out,
                    q,
                    k,
                    v,
                    attn,
                    ctx,
                    ln2: ln2_tape,
                    ln2_out,
                    u,
                    tanh_w,
                    gelu_out,
                });
            }
        }

        let (lnf_out, lnf_tape) =
            layer_norm(&x, params.vec1("final.ln.g"), params.vec1("final.ln.b"));
        let y = lnf_out.dot(&params.mat("head.w")) + params.vec1("head.b");
        if let Some(tp) = tape {
            tp.lnf = lnf_tape;
            tp.lnf_out = lnf_out;
        }
        Ok(self.unpatchify(&y, latents))
    }

    /// Backward pass matching [`Self::forward`] with a recorded tape.
    /// `d_out` is the loss gradient w.r.t. the network output (target
    /// frames only). Returns parameter gradients.
    pub fn backward(&self, params: &ParamSet, tape: &Tape, d_out: &Array4<f64>) -> ParamSet {
        let cfg = &self.cfg;
        let d = cfg.width;
        let np = cfg.tokens_per_frame();
        let latents = tape.latents;
        let heads = cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut grads = params.zeros_like();

        let dy = self.patchify_grad(d_out, latents);
        grads.add("head.w", &tape.lnf_out.t().dot(&dy).into_dyn());
        grads.add("head.b", &dy.sum_axis(Axis(0)).into_dyn());
        let d_lnf_out = dy.dot(&params.mat("head.w").t());
        let (mut dx, dg, db) =
            layer_norm_backward(&d_lnf_out, &tape.lnf, params.vec1("final.ln.g"));
        grads.add("final.ln.g", &dg.into_dyn());
        grads.add("final.ln.b", &db.into_dyn());

        for (i, bt) in tape.blocks.iter().enumerate().rev() {
            let b = format!("blocks.{i}");
            // MLP branch.
            let d_mlp_out = &dx;
            grads.add(
                &format!("{b}.mlp.fc2.w"),
                &bt.gelu_out.t().dot(d_mlp_out).into_dyn(),
            );
            grads.add(&format!("{b}.mlp.fc2.b"), &d_mlp_out.sum_axis(Axis(0)).into_dyn());
            let d_gelu = d_mlp_out.dot(&params.mat(&format!("{b}.mlp.fc2.w")).t());
            let d_u = gelu_backward(&d_gelu, &bt.u, &bt.tanh_w);
            grads.add(
                &format!("{b}.mlp.fc1.w"),
                &bt.ln2_out.t().dot(&d_u).into_dyn(),
            );
            grads.add(&format!("{b}.mlp.fc1.b"), &d_u.sum_axis(Axis(0)).into_dyn());
            let d_ln2_out = d_u.dot(&params.mat(&format!("{b}.mlp.fc1.w")).t());
            let (d_from_mlp, dg2, db2) =
                layer_norm_backward(&d_ln2_out, &bt.ln2, params.vec1(&format!("{b}.ln2.g")));
            grads.add(&format!("{b}.ln2.g"), &dg2.into_dyn());
            grads.add(&format!("{b}.ln2.b"), &db2.into_dyn());
            let d_x_mid = &dx + &d_from_mlp;

            // Attention branch.
            grads.add(
                &format!("{b}.attn.wo.w"),
                &bt.ctx.t().dot(&d_x_mid).into_dyn(),
            );
            grads.add(&format!("{b}.attn.wo.b"), &d_x_mid.sum_axis(Axis(0)).into_dyn());
            let d_ctx = d_x_mid.dot(&params.mat(&format!("{b}.attn.wo.w")).t());
            let s_tokens = d_ctx.nrows();
            let mut d_q = Array2::zeros((s_tokens, d));
            let mut d_k = Array2::zeros((s_tokens, d));
            let mut d_v = Array2::zeros((s_tokens, d));
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let a = tape.blocks[i].attn.index_axis(Axis(0), h);
                let d_ctx_h = d_ctx.slice(s![.., cols.clone()]);
                let vh = bt.v.slice(s![.., cols.clone()]);
                let d_a = d_ctx_h.dot(&vh.t());
                d_v.slice_mut(s![.., cols.clone()])
                    .assign(&a.t().dot(&d_ctx_h));
                // Softmax backward per row.
                let mut d_s = Array2::zeros((s_tokens, s_tokens));
                for r in 0..s_tokens {
                    let a_row = a.row(r);
                    let da_row = d_a.row(r);
                    let dot = a_row.dot(&da_row);
                    let mut out = d_s.row_mut(r);
                    for c in 0..s_tokens {
                        out[c] = a_row[c] * (da_row[c] - dot);
                    }
                }
                let qh = bt.q.slice(s![.., cols.clone()]);
                let kh = bt.k.slice(s![.., cols.clone()]);
                let mut d_qh = d_s.dot(&kh);
                d_qh *= scale;
                d_q.slice_mut(s![.., cols.clone()]).assign(&d_qh);
                let mut d_kh = d_s.t().dot(&qh);
                d_kh *= scale;
                d_k.slice_mut(s![.., cols]).assign(&d_kh);
            }
            for (name, dmat) in [("wq", &d_q), ("wk", &d_k), ("wv", &d_v)] {
                grads.add(
                    &format!("{b}.attn.{name}.w"),
                    &bt.ln1_out.t().dot(dmat).into_dyn(),
                );
                grads.add(
                    &format!("{b}.attn.{name}.b"),
                    &dmat.sum_axis(Axis(0)).into_dyn(),
                );
            }
            let d_ln1_out = d_q.dot(&params.mat(&format!("{b}.attn.wq.w")).t())
                + d_k.dot(&params.mat(&format!("{b}.attn.wk.w")).t())
                + d_v.dot(&params.mat(&format!("{b}.attn.wv.w")).t());
            let (d_from_attn, dg1, db1) =
                layer_norm_backward(&d_ln1_out, &bt.ln1, params.vec1(&format!("{b}.ln1.g")));
            grads.add(&format!("{b}.ln1.g"), &dg1.into_dyn());
            grads.add(&format!("{b}.ln1.b"), &db1.into_dyn());
            dx = d_x_mid + d_from_attn;
        }

        // Embedding adds.
        let d_temb = dx.sum_axis(Axis(0));
        grads.add("tproj.w", &outer(tape.t_code.view(), d_temb.view()).into_dyn());
        grads.add("tproj.b", &d_temb.into_dyn());
        for lf in 0..=latents {
            let d_e = dx.slice(s![lf * np..(lf + 1) * np, ..]).sum_axis(Axis(0));
            grads.add(
                "ivproj.w",
                &outer(tape.gamma_feats[lf].view(), d_e.view()).into_dyn(),
            );
            grads.add("ivproj.b", &d_e.into_dyn());
        }
        grads.add("embed.w", &tape.p_matrix.t().dot(&dx).into_dyn());
        grads.add("embed.b", &dx.sum_axis(Axis(0)).into_dyn());
        grads
    }
}

/// Denoising prediction in scaled space. `groups[0]` is the
/// condition-slot group (the replicated input interval); `cond = None`
/// runs the unconditional branch (zero condition image).
pub fn denoise(
    model: &Denoiser,
    params: &ParamSet,
    schedule: &NoiseSchedule,
    noised: &Array4<f64>,
    cond: Option<&Image>,
    groups: &[IntervalGroup],
    t: usize,
) -> Result<Array4<f64>> {
    if t == 0 || t > schedule.t_steps() {
        return Err(Error::Config(format!(
            "t = {t} outside schedule of {} steps",
            schedule.t_steps()
        )));
    }
    let zero;
    let cond = match cond {
        Some(c) => c,
        None => {
            let (_, h, w, ch) = noised.dim();
            zero = Array3::zeros((h, w, ch));
            &zero
        }
    };
    model.forward(params, cond, noised, groups, None, t, None)
}

/// Builds the condition-first group list for a target interval set.
pub fn conditioning_groups(
    intervals: &[crate::blur::ExposureInterval],
    group_size: usize,
) -> Result<Vec<IntervalGroup>> {
    let mut groups = vec![replicate_input_interval(group_size)];
    groups.extend(crate::encoding::group_intervals(intervals, group_size)?);
    Ok(groups)
}

/// The training objective for one item: noise the clean video at step
/// `t`, denoise, and score the mean squared difference of the denoised
/// and clean videos. Returns the loss and its parameter gradients.
#[allow(clippy::too_many_arguments)]
pub fn denoise_loss_grad(
    model: &Denoiser,
    params: &ParamSet,
    schedule: &NoiseSchedule,
    x0: &Array4<f64>,
    cond: Option<&Image>,
    intervals: &[crate::blur::ExposureInterval],
    t: usize,
    noise: &Array4<f64>,
) -> Result<(f64, ParamSet)> {
    let (loss, d_nn, tape, cond_img) =
        loss_forward(model, params, schedule, x0, cond, intervals, t, noise)?;
    let _ = cond_img;
    let grads = model.backward(params, &tape, &d_nn);
    Ok((loss, grads))
}

/// Forward-only variant of [`denoise_loss_grad`] (finite-difference
/// probes).
#[allow(clippy::too_many_arguments)]
pub fn denoise_loss(
    model: &Denoiser,
    params: &ParamSet,
    schedule: &NoiseSchedule,
    x0: &Array4<f64>,
    cond: Option<&Image>,
    intervals: &[crate::blur::ExposureInterval],
    t: usize,
    noise: &Array4<f64>,
) -> Result<f64> {
    let groups = conditioning_groups(intervals, model.cfg.group_size)?;
    let x_t = crate::diffusion::schedule::q_sample(x0, t, noise, schedule)?;
    let zero;
    let cond = match cond {
        Some(c) => c,
        None => {
            let (_, h, w, ch) = x0.dim();
            zero = Array3::zeros((h, w, ch));
            &zero
        }
    };
    let xhat = model.forward(params, cond, &x_t, &groups, None, t, None)?;
    let numel = xhat.len() as f64;
    Ok((&xhat - x0).mapv(|v| v * v).sum() / numel)
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn loss_forward(
    model: &Denoiser,
    params: &ParamSet,
    schedule: &NoiseSchedule,
    x0: &Array4<f64>,
    cond: Option<&Image>,
    intervals: &[crate::blur::ExposureInterval],
    t: usize,
    noise: &Array4<f64>,
) -> Result<(f64, Array4<f64>, Tape, Image)> {
    let groups = conditioning_groups(intervals, model.cfg.group_size)?;
    let x_t = crate::diffusion::schedule::q_sample(x0, t, noise, schedule)?;
    let cond_img = match cond {
        Some(c) => c.clone(),
        None => {
            let (_, h, w, ch) = x0.dim();
            Array3::zeros((h, w, ch))
        }
    };
    let mut tape = Tape::default();
    let xhat = model.forward(params, &cond_img, &x_t, &groups, None, t, Some(&mut tape))?;
    let numel = xhat.len() as f64;
    let resid = &xhat - x0;
    let loss = resid.mapv(|v| v * v).sum() / numel;
    let d_nn = resid.mapv(|v| 2.0 * v / numel);
    Ok((loss, d_nn, tape, cond_img))
}

// ---------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct LnTape {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnTape) {
    let (n, d) = x.dim();
    let mut xhat = Array2::zeros((n, d));
    let mut inv_std = Array1::zeros(n);
    let mut out = Array2::zeros((n, d));
    for r in 0..n {
        let row = x.row(r);
        let mean = row.sum() / d as f64;
        let mut var = 0.0;
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var /= d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = istd;
        for c in 0..d {
            let h = (row[c] - mean) * istd;
            xhat[[r, c]] = h;
            out[[r, c]] = h * g[c] + b[c];
        }
    }
    (out, LnTape { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    tape: &LnTape,
    g: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let (n, d) = dy.dim();
    let mut dx = Array2::zeros((n, d));
    let mut dg = Array1::zeros(d);
    let mut db = Array1::zeros(d);
    for r in 0..n {
        let xhat = tape.xhat.row(r);
        let dyr = dy.row(r);
        let mut mean_dh = 0.0;
        let mut mean_dh_xhat = 0.0;
        for c in 0..d {
            let dh = dyr[c] * g[c];
            mean_dh += dh;
            mean_dh_xhat += dh * xhat[c];
            dg[c] += dyr[c] * xhat[c];
            db[c] += dyr[c];
        }
        mean_dh /= d as f64;
        mean_dh_xhat /= d as f64;
        let istd = tape.inv_std[r];
        for c in 0..d {
            let dh = dyr[c] * g[c];
            dx[[r, c]] = istd * (dh - mean_dh - xhat[c] * mean_dh_xhat);
        }
    }
    (dx, dg, db)
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU; returns (gelu(u), tanh argument values) for backward.
fn gelu(u: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut tanh_w = Array2::zeros(u.dim());
    let mut out = Array2::zeros(u.dim());
    ndarray::Zip::from(&mut out)
        .and(&mut tanh_w)
        .and(u)
        .for_each(|o, tw, &x| {
            let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
            *tw = t;
            *o = 0.5 * x * (1.0 + t);
        });
    (out, tanh_w)
}

fn gelu_backward(dy: &Array2<f64>, u: &Array2<f64>, tanh_w: &Array2<f64>) -> Array2<f64> {
    let mut dx = Array2::zeros(u.dim());
    ndarray::Zip::from(&mut dx)
        .and(dy)
        .and(u)
        .and(tanh_w)
        .for_each(|d, &dyv, &x, &t| {
            let dwdx = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
            *d = dyv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dwdx);
        });
    dx
}

fn outer(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((u.len(), v.len()));
    for (i, &a) in u.iter().enumerate() {
        for (j, &b) in v.iter().enumerate() {
            out[[i, j]] = a * b;
        }
    }
    out
}

/// Forward activations recorded for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    latents: usize,
    p_matrix: Array2<f64>,
    gamma_feats: Vec<Array1<f64>>,
    t_code: Array1<f64>,
    blocks: Vec<BlockTape>,
    lnf: LnTape,
    lnf_out: Array2<f64>,
}

#[derive(Debug, Clone)]
struct BlockTape {
    ln1: LnTape,
    ln1_out: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array3<f64>,
    ctx: Array2<f64>,
    ln2: LnTape,
    ln2_out: Array2<f64>,
    u: Array2<f64>,
    tanh_w: Array2<f64>,
    gelu_out: Array2<f64>,
}
