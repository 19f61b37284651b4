//! Binary checkpoint format.
//!
//! Layout: magic "SADM", format version (u32 LE), length-prefixed (u64 LE)
//! UTF-8 JSON header, then every parameter tensor in declared order as
//! rank (u32 LE), dims (u64 LE each), and f64 LE values. Declared order:
//! denoiser layers (w, b), encoder layers (w, b), denoiser Adam first then
//! second moments, encoder Adam first then second moments.

use crate::error::{Error, Result};
use crate::models::{Denoiser, Encoder, ModelSpec};
use crate::optim::Adam;
use crate::rng::{RngState, StreamRng};
use crate::tensor::Tensor;
use crate::trainer::{Phase, Phase1Window, TrainConfig, TrainState};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SADM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelSpec,
    config: TrainConfig,
    step: u64,
    phase: Phase,
    round: u32,
    seg_step: u64,
    rng: RngState,
    opt_theta_step: u64,
    opt_phi_step: u64,
    window: Phase1Window,
    encoder_frozen: bool,
    tensors: Vec<TensorMeta>,
}

/// Parameter tensors in declared order, with names for the manifest.
fn tensor_list(state: &TrainState) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    for (i, layer) in state.denoiser.mlp.layers.iter().enumerate() {
        out.push((
            format!("denoiser.{i}.w"),
            layer.w.shape().to_vec(),
            layer.w.data().to_vec(),
        ));
        out.push((
            format!("denoiser.{i}.b"),
            layer.b.shape().to_vec(),
            layer.b.data().to_vec(),
        ));
    }
    for (i, layer) in state.encoder.mlp.layers.iter().enumerate() {
        out.push((
            format!("encoder.{i}.w"),
            layer.w.shape().to_vec(),
            layer.w.data().to_vec(),
        ));
        out.push((
            format!("encoder.{i}.b"),
            layer.b.shape().to_vec(),
            layer.b.data().to_vec(),
        ));
    }
    for (label, opt) in [("opt_theta", &state.opt_theta), ("opt_phi", &state.opt_phi)] {
        for (i, m) in opt.m.iter().enumerate() {
            out.push((format!("{label}.m.{i}"), vec![m.len()], m.clone()));
        }
        for (i, v) in opt.v.iter().enumerate() {
            out.push((format!("{label}.v.{i}"), vec![v.len()], v.clone()));
        }
    }
    out
}

pub fn write_checkpoint<W: Write>(out: &mut W, state: &TrainState, config: &TrainConfig) -> Result<()> {
    let tensors = tensor_list(state);
    let header = Header {
        model: state.model_spec.clone(),
        config: config.clone(),
        step: state.step,
        phase: state.phase,
        round: state.round,
        seg_step: state.seg_step,
        rng: state.rng.state(),
        opt_theta_step: state.opt_theta.step,
        opt_phi_step: state.opt_phi.step,
        window: state.window,
        encoder_frozen: state.encoder.frozen,
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorMeta {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;

    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(header_json.len() as u64).to_le_bytes())?;
    out.write_all(&header_json)?;
    for (_, shape, data) in &tensors {
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, state: &TrainState, config: &TrainConfig) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut file, state, config)?;
    file.flush()?;
    Ok(())
}

fn read_exact_or_corrupt<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::CorruptCheckpoint(format!("truncated while reading {what}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_corrupt(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_corrupt(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(TrainState, TrainConfig)> {
    let mut magic = [0u8; 4];
    read_exact_or_corrupt(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = read_u32(r, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::BadVersion(version));
    }
    let header_len = read_u64(r, "header length")? as usize;
    let mut header_bytes = vec![0u8; header_len];
    read_exact_or_corrupt(r, &mut header_bytes, "header")?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::CorruptCheckpoint(format!("bad header json: {e}")))?;

    let mut tensors: Vec<Vec<f64>> = Vec::with_capacity(header.tensors.len());
    for meta in &header.tensors {
        let rank = read_u32(r, &format!("rank of {}", meta.name))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(r, &format!("dims of {}", meta.name))? as usize);
        }
        if shape != meta.shape {
            return Err(Error::CorruptCheckpoint(format!(
                "shape mismatch for {}: payload {:?} vs header {:?}",
                meta.name, shape, meta.shape
            )));
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            read_exact_or_corrupt(r, &mut b, &format!("values of {}", meta.name))?;
            data.push(f64::from_le_bytes(b));
        }
        tensors.push(data);
    }

    rebuild_state(header, tensors)
}

fn rebuild_state(header: Header, tensors: Vec<Vec<f64>>) -> Result<(TrainState, TrainConfig)> {
    let mut denoiser = Denoiser::from_spec(&header.model)?;
    let mut encoder = Encoder::from_spec(&header.model)?;
    encoder.frozen = header.encoder_frozen;

    let theta_sizes: Vec<usize> = denoiser.mlp.params().iter().map(|p| p.numel()).collect();
    let phi_sizes: Vec<usize> = encoder.mlp.params().iter().map(|p| p.numel()).collect();
    let expected = theta_sizes.len() + phi_sizes.len() + 2 * theta_sizes.len() + 2 * phi_sizes.len();
    if tensors.len() != expected {
        return Err(Error::CorruptCheckpoint(format!(
            "expected {expected} tensors, found {}",
            tensors.len()
        )));
    }

    let mut iter = tensors.into_iter();
    let mut fill = |params: Vec<&mut Tensor>| -> Result<()> {
        for p in params {
            let data = iter.next().unwrap();
            if data.len() != p.numel() {
                return Err(Error::CorruptCheckpoint(format!(
                    "parameter size mismatch: {} vs {}",
                    data.len(),
                    p.numel()
                )));
            }
            p.data_mut().copy_from_slice(&data);
        }
        Ok(())
    };
    fill(denoiser.mlp.params_mut())?;
    fill(encoder.mlp.params_mut())?;

    let mut opt_theta = Adam::new(&theta_sizes, header.config.lr_theta);
    opt_theta.step = header.opt_theta_step;
    for m in opt_theta.m.iter_mut() {
        let data = iter.next().unwrap();
        m.copy_from_slice(&data);
    }
    for v in opt_theta.v.iter_mut() {
        let data = iter.next().unwrap();
        v.copy_from_slice(&data);
    }
    let mut opt_phi = Adam::new(&phi_sizes, header.config.lr_phi);
    opt_phi.step = header.opt_phi_step;
    for m in opt_phi.m.iter_mut() {
        let data = iter.next().unwrap();
        m.copy_from_slice(&data);
    }
    for v in opt_phi.v.iter_mut() {
        let data = iter.next().unwrap();
        v.copy_from_slice(&data);
    }

    let state = TrainState {
        model_spec: header.model,
        denoiser,
        encoder,
        opt_theta,
        opt_phi,
        step: header.step,
        phase: header.phase,
        round: header.round,
        seg_step: header.seg_step,
        rng: StreamRng::from_state(header.rng),
        window: header.window,
    };
    Ok((state, header.config))
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainState, TrainConfig)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut file)
}
