//! Checkpoint container: a JSON header (configs, step, seed, tensor
//! manifest, format version) followed by raw little-endian f64 tensors.
//! Saving is deterministic, so save → load → save is byte-identical.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::diffusion::model::DenoiserConfig;
use crate::diffusion::params::ParamSet;
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::train::ModelState;
use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BLURKIT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    step: u64,
    seed: u64,
    denoiser: DenoiserConfig,
    encoder: EncoderConfig,
    schedule: NoiseSchedule,
    params: Vec<TensorMeta>,
    opt_m: Vec<TensorMeta>,
    opt_v: Vec<TensorMeta>,
}

fn metas(set: &ParamSet) -> Vec<TensorMeta> {
    set.iter()
        .map(|(n, t)| TensorMeta { name: n.to_string(), shape: t.shape().to_vec() })
        .collect()
}

fn write_set(out: &mut impl Write, set: &ParamSet, path: &Path) -> Result<()> {
    for (_, t) in set.iter() {
        for &v in t.iter() {
            out.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

fn read_set(input: &mut impl Read, metas: &[TensorMeta], path: &Path) -> Result<ParamSet> {
    let mut set = ParamSet::new();
    for meta in metas {
        let numel: usize = meta.shape.iter().product();
        let mut buf = vec![0u8; numel * 8];
        input
            .read_exact(&mut buf)
            .map_err(|_| Error::Corrupt { path: path.to_path_buf(), msg: "truncated tensor data".into() })?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                msg: format!("non-finite values in tensor {}", meta.name),
            });
        }
        let tensor = ArrayD::from_shape_vec(IxDyn(&meta.shape), values).map_err(|_| {
            Error::Corrupt { path: path.to_path_buf(), msg: format!("bad shape for {}", meta.name) }
        })?;
        set.insert(meta.name.clone(), tensor);
    }
    Ok(set)
}

/// Writes a checkpoint. The file layout is `magic | header_len | header
/// JSON | params | opt_m | opt_v`.
pub fn checkpoint_save(state: &ModelState, path: &Path) -> Result<()> {
    if !state.params.all_finite() {
        return Err(Error::Config("refusing to checkpoint non-finite parameters".into()));
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        step: state.step,
        seed: state.seed,
        denoiser: state.model.config().clone(),
        encoder: state.model.encoder_config().clone(),
        schedule: state.schedule.clone(),
        params: metas(&state.params),
        opt_m: metas(&state.opt_m),
        opt_v: metas(&state.opt_v),
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    out.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    out.write_all(&(header_json.len() as u64).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    out.write_all(&header_json).map_err(|e| Error::io(path, e))?;
    write_set(&mut out, &state.params, path)?;
    write_set(&mut out, &state.opt_m, path)?;
    write_set(&mut out, &state.opt_v, path)?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint written by [`checkpoint_save`], re-validating the
/// format version and tensor layout against the stored configs.
pub fn checkpoint_load(path: &Path) -> Result<ModelState> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = std::io::BufReader::new(file);
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Corrupt { path: path.to_path_buf(), msg: "file too short".into() })?;
    if &magic != MAGIC {
        return Err(Error::Corrupt { path: path.to_path_buf(), msg: "bad magic".into() });
    }
    let mut len = [0u8; 8];
    input
        .read_exact(&mut len)
        .map_err(|_| Error::Corrupt { path: path.to_path_buf(), msg: "missing header".into() })?;
    let header_len = u64::from_le_bytes(len) as usize;
    if header_len > 64 << 20 {
        return Err(Error::Corrupt { path: path.to_path_buf(), msg: "implausible header".into() });
    }
    let mut header_buf = vec![0u8; header_len];
    input
        .read_exact(&mut header_buf)
        .map_err(|_| Error::Corrupt { path: path.to_path_buf(), msg: "truncated header".into() })?;
    let header: Header = serde_json::from_slice(&header_buf)
        .map_err(|e| Error::Corrupt { path: path.to_path_buf(), msg: format!("header JSON: {e}") })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Version { found: header.format_version, expected: FORMAT_VERSION });
    }
    let schedule = header.schedule.rebuild()?;
    let params = read_set(&mut input, &header.params, path)?;
    let opt_m = read_set(&mut input, &header.opt_m, path)?;
    let opt_v = read_set(&mut input, &header.opt_v, path)?;

    let model = crate::diffusion::model::Denoiser::new(header.denoiser, header.encoder)?;
    // The stored layout must match what the configs produce.
    let reference = model.init_params(0);
    reference.same_layout(&params).map_err(|_| Error::Corrupt {
        path: path.to_path_buf(),
        msg: "tensor layout does not match configs".into(),
    })?;
    params.same_layout(&opt_m).map_err(|_| Error::Corrupt {
        path: path.to_path_buf(),
        msg: "optimizer moment layout mismatch".into(),
    })?;
    params.same_layout(&opt_v).map_err(|_| Error::Corrupt {
        path: path.to_path_buf(),
        msg: "optimizer moment layout mismatch".into(),
    })?;
    Ok(ModelState {
        model,
        schedule,
        params,
        opt_m,
        opt_v,
        step: header.step,
        seed: header.seed,
    })
}
