//! Checkpoint file format: a single-line JSON header (format version,
//! encoder config, label scheme, vocabulary fingerprint, and the declared
//! array order) followed by the raw little-endian 64-bit float arrays
//! back to back.

use std::fs;
use std::path::Path;

use dcmatch_core::corpus::Vocab;
use dcmatch_core::encoder::{EncoderConfig, ModelParams};
use dcmatch_core::scheme::LabelScheme;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::files::atomic_write;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: EncoderConfig,
    pub scheme: LabelScheme,
    /// Hex FNV-1a fingerprint of the vocabulary the model was trained with.
    pub vocab_fingerprint: String,
    pub arrays: Vec<ArrayInfo>,
}

fn fingerprint_hex(vocab: &Vocab) -> String {
    format!("{:016x}", vocab.fingerprint())
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    scheme: &LabelScheme,
    vocab: &Vocab,
) -> Result<(), CliError> {
    let arrays: Vec<ArrayInfo> = params
        .tensor_metas()
        .into_iter()
        .zip(params.tensors())
        .map(|((name, _), tensor)| ArrayInfo { name, len: tensor.len() })
        .collect();
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: params.config.clone(),
        scheme: scheme.clone(),
        vocab_fingerprint: fingerprint_hex(vocab),
        arrays,
    };
    let mut bytes = serde_json::to_vec(&header)
        .map_err(|e| CliError::Runtime(format!("serializing checkpoint header: {e}")))?;
    bytes.push(b'\n');
    for tensor in params.tensors() {
        for value in tensor {
            bytes.extend_from_slice(&value.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

pub struct LoadedCheckpoint {
    pub params: ModelParams,
    pub scheme: LabelScheme,
    pub vocab_fingerprint: String,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint, CliError> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| {
        CliError::Runtime(format!("{}: missing checkpoint header", path.display()))
    })?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline]).map_err(|e| {
        CliError::Runtime(format!("{}: bad checkpoint header: {e}", path.display()))
    })?;
    if header.format_version != FORMAT_VERSION {
        return Err(CliError::Runtime(format!(
            "{}: unsupported checkpoint format version {}",
            path.display(),
            header.format_version
        )));
    }

    let mut params = ModelParams::zeros(&header.config, &header.scheme)?;
    let metas = params.tensor_metas();
    if metas.len() != header.arrays.len() {
        return Err(CliError::Runtime(format!(
            "{}: checkpoint declares {} arrays, model has {}",
            path.display(),
            header.arrays.len(),
            metas.len()
        )));
    }
    let mut offset = newline + 1;
    for (tensor, ((name, _), info)) in
        params.tensors_mut().into_iter().zip(metas.iter().zip(&header.arrays))
    {
        if *name != info.name || tensor.len() != info.len {
            return Err(CliError::Runtime(format!(
                "{}: array {} ({} values) does not match declared {} ({} values)",
                path.display(),
                name,
                tensor.len(),
                info.name,
                info.len
            )));
        }
        let end = offset + info.len * 8;
        if end > bytes.len() {
            return Err(CliError::Runtime(format!("{}: checkpoint truncated", path.display())));
        }
        for (value, chunk) in tensor.iter_mut().zip(bytes[offset..end].chunks_exact(8)) {
            *value = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        offset = end;
    }
    if offset != bytes.len() {
        return Err(CliError::Runtime(format!(
            "{}: {} trailing bytes after declared arrays",
            path.display(),
            bytes.len() - offset
        )));
    }
    Ok(LoadedCheckpoint { params, scheme: header.scheme, vocab_fingerprint: header.vocab_fingerprint })
}

/// Refuses to pair a checkpoint with a vocabulary other than the one it was
/// trained with.
pub fn verify_vocab(loaded: &LoadedCheckpoint, vocab: &Vocab) -> Result<(), CliError> {
    let actual = fingerprint_hex(vocab);
    if actual != loaded.vocab_fingerprint {
        return Err(CliError::Runtime(format!(
            "checkpoint/vocab hash mismatch: checkpoint was trained with vocabulary {}, got {}",
            loaded.vocab_fingerprint, actual
        )));
    }
    Ok(())
}
