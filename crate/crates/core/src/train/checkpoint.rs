//! Checkpoint container.
//!
//! ```text
//! "panvae-ckpt-v1\n"
//! u64 LE          length of the metadata record
//! JSON metadata   model config, variant, active mask, notes, tensor index
//! payload         tensors back to back, little-endian f32 or f64
//! 32 bytes        SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::Variant;
use crate::model::{Model, ModelConfig};

pub const CHECKPOINT_FORMAT: &str = "panvae-ckpt-v1";
const FAMILY: &str = "panvae-ckpt-";
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub variant: Variant,
    /// Provenance notes, e.g. variant switches.
    pub notes: Vec<String>,
}

impl Checkpoint {
    pub fn new(model: Model, variant: Variant) -> Self {
        Checkpoint {
            model,
            variant,
            notes: Vec::new(),
        }
    }

    /// Reinterprets the checkpoint under another variant. Prototypes and
    /// network weights are shared by both variants, so this only records a note.
    pub fn switch_variant(&mut self, variant: Variant) {
        if variant != self.variant {
            let note = format!("variant switched from {} to {}", self.variant, variant);
            log::info!("{note}");
            self.notes.push(note);
            self.variant = variant;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    format: String,
    config: ModelConfig,
    variant: Variant,
    active_mask: Vec<bool>,
    notes: Vec<String>,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let model = &ckpt.model;
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, param) in model.named_network_params() {
        tensors.push(TensorEntry {
            name,
            dtype: Dtype::F32,
            shape: vec![param.value.len()],
            offset: payload.len(),
        });
        payload.extend(param.value.iter().flat_map(|v| v.to_le_bytes()));
    }
    let bank = &model.bank;
    let head = &model.head;
    for (name, shape, values) in [
        (
            "prototypes.phi",
            vec![bank.num_classes, bank.per_class, bank.dim],
            &bank.phi,
        ),
        (
            "classifier.weight",
            vec![head.inputs, head.num_classes],
            &head.weights,
        ),
    ] {
        tensors.push(TensorEntry {
            name: name.into(),
            dtype: Dtype::F64,
            shape,
            offset: payload.len(),
        });
        payload.extend(values.iter().flat_map(|v| v.to_le_bytes()));
    }
    let meta = Metadata {
        format: CHECKPOINT_FORMAT.into(),
        config: model.config.clone(),
        variant: ckpt.variant,
        active_mask: bank.active.clone(),
        notes: ckpt.notes.clone(),
        tensors,
    };
    let meta = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut bytes =
        Vec::with_capacity(CHECKPOINT_FORMAT.len() + 9 + meta.len() + payload.len() + DIGEST_LEN);
    bytes.extend_from_slice(CHECKPOINT_FORMAT.as_bytes());
    bytes.push(b'\n');
    bytes.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&meta);
    bytes.extend_from_slice(&payload);
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn incompatible(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::IncompatibleCheckpoint(format!("{}: {reason}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let tag_end = bytes
        .iter()
        .take(64)
        .position(|&b| b == b'\n')
        .ok_or_else(|| incompatible(path, "missing format tag"))?;
    let tag = String::from_utf8_lossy(&bytes[..tag_end]);
    if !tag.starts_with(FAMILY) {
        return Err(incompatible(path, "not a checkpoint file"));
    }
    if tag != CHECKPOINT_FORMAT {
        return Err(incompatible(
            path,
            format!("format `{tag}`, this build reads `{CHECKPOINT_FORMAT}`"),
        ));
    }
    if bytes.len() < tag_end + 1 + 8 + DIGEST_LEN {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    let mut at = tag_end + 1;
    let meta_len = u64::from_le_bytes(body[at..at + 8].try_into().expect("8 bytes")) as usize;
    at += 8;
    let meta_bytes = body
        .get(at..at + meta_len)
        .ok_or_else(|| incompatible(path, "metadata record overruns the file"))?;
    let meta: Metadata = serde_json::from_slice(meta_bytes).map_err(|e| incompatible(path, e))?;
    let payload = &body[at + meta_len..];

    let mut model = Model::new(meta.config.clone()).map_err(|e| incompatible(path, e))?;
    let find = |name: &str, dtype: Dtype, len: usize| -> Result<&[u8]> {
        let entry = meta
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| incompatible(path, format!("tensor `{name}` missing")))?;
        let width = if dtype == Dtype::F32 { 4 } else { 8 };
        if entry.dtype != dtype || entry.shape.iter().product::<usize>() != len {
            return Err(incompatible(
                path,
                format!(
                    "tensor `{name}` has shape {:?}, expected {len} values",
                    entry.shape
                ),
            ));
        }
        payload
            .get(entry.offset..entry.offset + width * len)
            .ok_or_else(|| incompatible(path, format!("tensor `{name}` overruns the payload")))
    };
    let names: Vec<String> = model
        .named_network_params()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let mut loaded = Vec::with_capacity(names.len());
    for (name, param) in names.iter().zip(model.network_params_mut()) {
        let raw = find(name, Dtype::F32, param.value.len())?;
        loaded.push(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect::<Vec<_>>(),
        );
    }
    for (param, values) in model.network_params_mut().into_iter().zip(loaded) {
        param.value = values;
    }
    let read_f64 = |raw: &[u8]| -> Vec<f64> {
        raw.chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect()
    };
    model.bank.phi = read_f64(find("prototypes.phi", Dtype::F64, model.bank.phi.len())?);
    model.head.weights = read_f64(find(
        "classifier.weight",
        Dtype::F64,
        model.head.weights.len(),
    )?);
    if meta.active_mask.len() != model.bank.active.len() {
        return Err(incompatible(
            path,
            "active mask does not match the prototype bank",
        ));
    }
    model.bank.active = meta.active_mask;
    model.bank.validate().map_err(|e| incompatible(path, e))?;
    Ok(Checkpoint {
        model,
        variant: meta.variant,
        notes: meta.notes,
    })
}
