//! Named-tensor checkpoint files.
//!
//! Layout: the 8-byte magic `AFCKPT01`, the manifest length as a
//! little-endian `u64`, a UTF-8 JSON manifest, then the payload of
//! little-endian `f32` values. The manifest maps each parameter name to
//! `{shape, dtype: "f32", offset}` (byte offset into the payload) and holds
//! run metadata under the reserved key `__metadata__`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::{
    adapter_layout, encoder_layout, fusion_layout, head_layout, Model, ModelConfig, ParamGroup,
    ParamSpec, ParamStore, SlotMode, Stage,
};
use crate::task::TaskSpec;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AFCKPT01";
pub const METADATA_KEY: &str = "__metadata__";
const MAX_MANIFEST_BYTES: u64 = 64 << 20;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    Magic,
    #[error("corrupt manifest: {0}")]
    Manifest(String),
    #[error("checkpoint entry `{name}`: {message}")]
    Entry { name: String, message: String },
    #[error("truncated checkpoint: payload has {actual} bytes, manifest needs {expected}")]
    Truncated { expected: u64, actual: u64 },
}

fn entry_err(name: &str, message: impl Into<String>) -> Error {
    CheckpointError::Entry {
        name: name.to_string(),
        message: message.into(),
    }
    .into()
}

/// Everything besides parameter values needed to rebuild and audit a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub stage: Stage,
    pub seed: u64,
    pub encoder_seed: u64,
    pub heads: Vec<TaskSpec>,
    pub fusion_tasks: Option<Vec<String>>,
    /// Regular vocabulary tokens in id order (specials excluded).
    pub vocab: Vec<String>,
    pub train_config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_model(model: &Model, meta: CheckpointMeta) -> Self {
        Self {
            meta,
            params: model.params().clone(),
        }
    }

    /// Rebuilds the model with the slot the checkpoint was trained with:
    /// fusion when fusion layers are present, otherwise its single adapter.
    pub fn into_model(self) -> Result<Model> {
        let mut model = Model::from_store(
            self.meta.config,
            self.params,
            &self.meta.heads,
            self.meta.fusion_tasks.as_deref(),
        )?;
        let mode = match self.meta.fusion_tasks {
            Some(tasks) => SlotMode::Fusion(tasks),
            None => match model.adapter_tasks().as_slice() {
                [] => SlotMode::None,
                [t] => SlotMode::Single(t.to_string()),
                many => {
                    return Err(Error::Config(format!(
                        "checkpoint has adapters {many:?} but no fusion layers"
                    )))
                }
            },
        };
        model.attach(mode)?;
        Ok(model)
    }
}

/// The layout implied by the metadata plus the adapter tasks named in the
/// manifest.
fn expected_layout(meta: &CheckpointMeta, names: &[&str]) -> Vec<ParamSpec> {
    let cfg = &meta.config;
    let mut layout = encoder_layout(cfg);
    let mut tasks: Vec<String> = Vec::new();
    for name in names {
        if let Some(ParamGroup::Adapter(t)) = ParamGroup::of(name) {
            if !tasks.contains(&t) {
                tasks.push(t);
            }
        }
    }
    for t in &tasks {
        layout.extend(adapter_layout(cfg, t));
    }
    if meta.fusion_tasks.is_some() {
        layout.extend(fusion_layout(cfg));
    }
    for h in &meta.heads {
        layout.extend(head_layout(cfg, &h.name, h.kind.num_labels()));
    }
    layout
}

/// Serializes `params` and `meta` into checkpoint bytes.
pub fn encode_checkpoint(meta: &CheckpointMeta, params: &ParamStore) -> Result<Vec<u8>> {
    let mut manifest = serde_json::Map::new();
    manifest.insert(
        METADATA_KEY.to_string(),
        serde_json::to_value(meta).map_err(|e| CheckpointError::Manifest(e.to_string()))?,
    );
    let mut offset = 0u64;
    let mut payload = Vec::new();
    for (_, name, t) in params.iter() {
        let entry = Entry {
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset,
        };
        manifest.insert(
            name.to_string(),
            serde_json::to_value(entry).map_err(|e| CheckpointError::Manifest(e.to_string()))?,
        );
        for v in t.data() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        offset += 4 * t.numel() as u64;
    }
    // serde_json maps are ordered by key, so the bytes are deterministic.
    let manifest =
        serde_json::to_vec(&manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + manifest.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, params: &ParamStore) -> Result<()> {
    let bytes = encode_checkpoint(meta, params)?;
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file_name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    let mut f = File::create(&tmp).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io)
}

/// Parsed and validated header; the payload has not been read yet.
struct Header {
    meta: CheckpointMeta,
    /// Sorted by offset.
    entries: Vec<(String, Entry)>,
    payload_len: u64,
}

fn read_header<R: Read>(r: &mut R, total_len: u64) -> Result<Header> {
    let mut magic = [0u8; 8];
    let mut len = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| CheckpointError::Magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Magic.into());
    }
    r.read_exact(&mut len)
        .map_err(|_| CheckpointError::Manifest("missing manifest length".into()))?;
    let manifest_len = u64::from_le_bytes(len);
    if manifest_len > MAX_MANIFEST_BYTES || 16 + manifest_len > total_len {
        return Err(CheckpointError::Manifest(format!(
            "manifest length {manifest_len} exceeds file size {total_len}"
        ))
        .into());
    }
    let mut raw = vec![0u8; manifest_len as usize];
    r.read_exact(&mut raw)
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let mut map: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&raw).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let meta = map
        .remove(METADATA_KEY)
        .ok_or_else(|| CheckpointError::Manifest(format!("missing `{METADATA_KEY}`")))?;
    let meta: CheckpointMeta =
        serde_json::from_value(meta).map_err(|e| entry_err(METADATA_KEY, e.to_string()))?;
    let mut entries = Vec::with_capacity(map.len());
    for (name, v) in map {
        let e: Entry =
            serde_json::from_value(v).map_err(|err| entry_err(&name, err.to_string()))?;
        if e.dtype != "f32" {
            return Err(entry_err(&name, format!("unsupported dtype {:?}", e.dtype)));
        }
        if e.shape.is_empty() || e.shape.contains(&0) {
            return Err(entry_err(&name, format!("invalid shape {:?}", e.shape)));
        }
        entries.push((name, e));
    }
    entries.sort_by_key(|(_, e)| e.offset);

    let mut expected_offset = 0u64;
    for (name, e) in &entries {
        if e.offset != expected_offset {
            return Err(entry_err(
                name,
                format!("offset {} where {expected_offset} was expected", e.offset),
            ));
        }
        expected_offset += 4 * e.shape.iter().product::<usize>() as u64;
    }

    let names: Vec<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
    let layout = expected_layout(&meta, &names);
    let by_name: BTreeMap<&str, &Entry> = entries.iter().map(|(n, e)| (n.as_str(), e)).collect();
    for spec in &layout {
        match by_name.get(spec.name.as_str()) {
            None => return Err(entry_err(&spec.name, "missing from manifest")),
            Some(e) if e.shape != spec.shape => {
                return Err(entry_err(
                    &spec.name,
                    format!(
                        "shape {:?} does not match configured {:?}",
                        e.shape, spec.shape
                    ),
                ))
            }
            Some(_) => {}
        }
    }
    if layout.len() != entries.len() {
        let known: std::collections::HashSet<&str> =
            layout.iter().map(|s| s.name.as_str()).collect();
        if let Some(extra) = names.iter().find(|n| !known.contains(*n)) {
            return Err(entry_err(extra, "not part of the configured model"));
        }
    }

    let payload_len = total_len - 16 - manifest_len;
    if payload_len != expected_offset {
        return Err(CheckpointError::Truncated {
            expected: expected_offset,
            actual: payload_len,
        }
        .into());
    }
    Ok(Header {
        meta,
        entries,
        payload_len,
    })
}

fn read_payload<R: Read>(r: &mut R, header: Header) -> Result<Checkpoint> {
    let mut payload = vec![0u8; header.payload_len as usize];
    r.read_exact(&mut payload)
        .map_err(|_| CheckpointError::Truncated {
            expected: header.payload_len,
            actual: 0,
        })?;
    let mut params = ParamStore::new();
    for (name, e) in header.entries {
        let start = e.offset as usize;
        let n: usize = e.shape.iter().product();
        let data: Vec<f64> = payload[start..start + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let t = Tensor::new(e.shape, data).map_err(|err| entry_err(&name, err.to_string()))?;
        params
            .insert(&name, t)
            .map_err(|err| entry_err(&name, err.to_string()))?;
    }
    Ok(Checkpoint {
        meta: header.meta,
        params,
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = bytes;
    let header = read_header(&mut r, bytes.len() as u64)?;
    read_payload(&mut r, header)
}

/// Validates the whole manifest against the file size before reading any
/// parameter values.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = File::open(path).map_err(io)?;
    let total = f.metadata().map_err(io)?.len();
    let mut r = BufReader::new(f);
    let header = read_header(&mut r, total)?;
    read_payload(&mut r, header)
}

/// Reads only the metadata block.
pub fn read_metadata(path: &Path) -> Result<CheckpointMeta> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = File::open(path).map_err(io)?;
    let total = f.metadata().map_err(io)?.len();
    Ok(read_header(&mut BufReader::new(f), total)?.meta)
}
