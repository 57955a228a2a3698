//! Checkpoint container.
//!
//! Layout: magic bytes "BGYM", format version (u32 LE), header length
//! (u64 LE), UTF-8 JSON header, then raw little-endian f32 arrays in
//! manifest order. The header records the model config, the vocabulary,
//! and a tensor manifest of (name, rows, cols, byte offset into the data
//! section). Extra tensors (bias-token snapshots) ride along after the
//! model tensors. Round-tripping a model through save/load is bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::kernels::Tensor2D;

use super::{Model, ModelConfig, Weights};

pub const MAGIC: &[u8; 4] = b"BGYM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
    manifest: Vec<ManifestEntry>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Write a model (plus named extra tensors and string metadata) to disk.
pub fn save_checkpoint(
    model: &Model,
    extras: &[(String, Tensor2D)],
    meta: &BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    let named = model.weights.named_tensors();
    let mut manifest = Vec::with_capacity(named.len() + extras.len());
    let mut offset = 0u64;
    let mut order: Vec<&Tensor2D> = Vec::with_capacity(named.len() + extras.len());
    for (name, t) in named {
        manifest.push(ManifestEntry {
            name,
            rows: t.rows(),
            cols: t.cols(),
            offset,
        });
        offset += (t.data().len() * 4) as u64;
        order.push(t);
    }
    for (name, t) in extras {
        manifest.push(ManifestEntry {
            name: name.clone(),
            rows: t.rows(),
            cols: t.cols(),
            offset,
        });
        offset += (t.data().len() * 4) as u64;
        order.push(t);
    }

    let header = Header {
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        manifest,
        meta: meta.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)?;

    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for t in order {
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a model, its extra tensors, and metadata.
pub fn load_checkpoint(
    path: &Path,
) -> Result<(Model, BTreeMap<String, Tensor2D>, BTreeMap<String, String>)> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic bytes {magic:?}",
            path.display()
        )));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let header_len = u64::from_le_bytes(len) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;

    let mut data = Vec::new();
    r.read_to_end(&mut data)?;

    let read_tensor = |e: &ManifestEntry| -> Result<Tensor2D> {
        let n = e.rows * e.cols;
        let start = e.offset as usize;
        let end = start + n * 4;
        if end > data.len() {
            return Err(Error::Format(format!(
                "{}: tensor {} overruns data section",
                path.display(),
                e.name
            )));
        }
        let vals: Vec<f32> = data[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor2D::from_vec(e.rows, e.cols, vals)
    };

    header.config.validate()?;
    let mut weights = Weights::zeros(&header.config);
    let mut by_name: BTreeMap<&str, &ManifestEntry> = BTreeMap::new();
    for e in &header.manifest {
        if by_name.insert(e.name.as_str(), e).is_some() {
            return Err(Error::Format(format!(
                "{}: duplicate tensor {}",
                path.display(),
                e.name
            )));
        }
    }
    let mut consumed: Vec<String> = Vec::new();
    for (name, t) in weights.named_tensors_mut() {
        let entry = by_name.get(name.as_str()).ok_or_else(|| {
            Error::Format(format!("{}: missing tensor {name}", path.display()))
        })?;
        let loaded = read_tensor(entry)?;
        if loaded.shape() != t.shape() {
            return Err(Error::Format(format!(
                "{}: tensor {name} has shape {:?}, expected {:?}",
                path.display(),
                loaded.shape(),
                t.shape()
            )));
        }
        *t = loaded;
        consumed.push(name);
    }
    let mut extras = BTreeMap::new();
    for e in &header.manifest {
        if !consumed.iter().any(|n| n == &e.name) {
            extras.insert(e.name.clone(), read_tensor(e)?);
        }
    }

    let vocab = Vocabulary::from_tokens(header.vocab)?;
    if vocab.len() != header.config.vocab_size {
        return Err(Error::Format(format!(
            "{}: vocab size {} does not match config {}",
            path.display(),
            vocab.len(),
            header.config.vocab_size
        )));
    }

    Ok((
        Model {
            config: header.config,
            weights,
            vocab,
        },
        extras,
        header.meta,
    ))
}
