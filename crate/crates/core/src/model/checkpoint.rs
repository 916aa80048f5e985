//! Model checkpoints.
//!
//! Layout (integers little-endian):
//!
//! 1. magic `NTF1`, one version byte
//! 2. `u64` byte length of the metadata block, then the UTF-8 JSON metadata
//!    (architecture, tensor manifest, optimizer step, training progress)
//! 3. every learnable tensor in [`NtfParams::tensors`] order, then the batch
//!    norm running statistics, as row-major `f64`
//! 4. when the metadata says so, the Adam first moments then second moments
//!    in the same tensor order

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, NtfModel, NtfParams};
use crate::error::{NtfError, Result};
use crate::optim::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NTF1";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: NtfModel,
    pub optimizer: Option<AdamState>,
    /// Completed training epochs, for resuming.
    pub epochs_done: usize,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: ModelConfig,
    tensors: Vec<(String, usize)>,
    running_stats: Vec<usize>,
    optimizer_step: Option<u64>,
    epochs_done: usize,
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, out: &mut [f64], what: &str) -> Result<()> {
    let mut buf = [0u8; 8];
    for v in out.iter_mut() {
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                NtfError::CorruptFile(format!("truncated in {what}"))
            }
            _ => NtfError::Io(e),
        })?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(())
}

pub fn write_checkpoint_to<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    let params = &ckpt.model.params;
    let tensors = params.tensors();
    let meta = Metadata {
        config: ckpt.model.config.clone(),
        tensors: params
            .tensor_names()
            .into_iter()
            .zip(tensors.iter().map(|t| t.len()))
            .collect(),
        running_stats: params.running_stats().iter().map(|t| t.len()).collect(),
        optimizer_step: ckpt.optimizer.as_ref().map(|o| o.t),
        epochs_done: ckpt.epochs_done,
    };
    let meta = serde_json::to_vec(&meta)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(&meta)?;
    for t in tensors.iter().chain(&params.running_stats()) {
        write_f64s(&mut w, t)?;
    }
    if let Some(opt) = &ckpt.optimizer {
        if opt.m.len() != tensors.len() {
            return Err(NtfError::shape(
                format!("{} optimizer moments", tensors.len()),
                opt.m.len(),
            ));
        }
        for t in opt.m.iter().chain(&opt.v) {
            write_f64s(&mut w, t)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint_from<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| NtfError::CorruptFile("truncated header".into()))?;
    if &magic[..4] != CHECKPOINT_MAGIC {
        return Err(NtfError::VersionMismatch(format!(
            "not a checkpoint (magic {:?})",
            String::from_utf8_lossy(&magic[..4])
        )));
    }
    if magic[4] != CHECKPOINT_VERSION {
        return Err(NtfError::VersionMismatch(format!(
            "checkpoint version {} (supported: {CHECKPOINT_VERSION})",
            magic[4]
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| NtfError::CorruptFile("truncated metadata length".into()))?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 26 {
        return Err(NtfError::CorruptFile(format!(
            "implausible metadata length {len}"
        )));
    }
    let mut meta = vec![0u8; len as usize];
    r.read_exact(&mut meta)
        .map_err(|_| NtfError::CorruptFile("truncated metadata".into()))?;
    let meta: Metadata = serde_json::from_slice(&meta)
        .map_err(|e| NtfError::CorruptFile(format!("bad metadata: {e}")))?;
    meta.config
        .validate()
        .map_err(|e| NtfError::CorruptFile(e.to_string()))?;

    let mut params = NtfParams::zeros(&meta.config);
    let manifest: Vec<(String, usize)> = params
        .tensor_names()
        .into_iter()
        .zip(params.tensors().iter().map(|t| t.len()))
        .collect();
    let stats: Vec<usize> = params.running_stats().iter().map(|t| t.len()).collect();
    if manifest != meta.tensors || stats != meta.running_stats {
        return Err(NtfError::CorruptFile(
            "tensor manifest does not match the architecture".into(),
        ));
    }
    for t in params.tensors_mut() {
        read_f64s(&mut r, t, "parameters")?;
    }
    for t in params.running_stats_mut() {
        read_f64s(&mut r, t, "running statistics")?;
    }
    let optimizer = match meta.optimizer_step {
        Some(step) => {
            let mut opt = AdamState::new(manifest.iter().map(|(_, n)| *n));
            opt.t = step;
            for t in opt.m.iter_mut().chain(opt.v.iter_mut()) {
                read_f64s(&mut r, t, "optimizer state")?;
            }
            Some(opt)
        }
        None => None,
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NtfError::CorruptFile("trailing bytes".into()));
    }
    Ok(Checkpoint {
        model: NtfModel {
            config: meta.config,
            params,
        },
        optimizer,
        epochs_done: meta.epochs_done,
    })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint_to(ckpt, BufWriter::new(File::create(path)?))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint_from(BufReader::new(File::open(path)?))
}
