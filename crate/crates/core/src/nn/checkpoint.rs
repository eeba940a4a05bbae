//! Named-tensor archive.
//!
//! Layout: the 8-byte magic `MTVRPCK1`, a little-endian `u64` header length,
//! a JSON header `{"manifest": .., "tensors": [{"name", "shape", "dtype",
//! "offset", "len"}]}`, then the row-major `f32` little-endian payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{to_f64_vec, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MTVRPCK1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// Offset into the payload, in elements.
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header<M> {
    manifest: M,
    tensors: Vec<TensorEntry>,
}

/// Architecture description stored next to the tensors.
pub trait CheckpointManifest: Serialize + DeserializeOwned {}

impl<T: Serialize + DeserializeOwned> CheckpointManifest for T {}

pub fn save_checkpoint<M: CheckpointManifest>(
    path: &Path,
    manifest: &M,
    store: &ParamStore,
) -> Result<()> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut payload: Vec<u8> = Vec::with_capacity(store.n_elements() * 4);
    let mut offset = 0;
    for (name, var) in store.iter() {
        let values = to_f64_vec(var.as_tensor())?;
        for v in &values {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: var.dims().to_vec(),
            dtype: "f32".into(),
            offset,
            len: values.len(),
        });
        offset += values.len();
    }
    let header = serde_json::to_vec(&Header { manifest, tensors })?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    // write-then-rename keeps the previous checkpoint intact on failure
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&(header.len() as u64).to_le_bytes())?;
        f.write_all(&header)?;
        f.write_all(&payload)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub type NamedTensor = (String, Vec<usize>, Vec<f64>);

pub fn load_checkpoint<M: CheckpointManifest>(path: &Path) -> Result<(M, Vec<NamedTensor>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::invalid(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header<M> = serde_json::from_slice(body)?;
    let payload = &bytes[16 + hlen..];
    let mut out = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        if t.dtype != "f32" {
            return Err(bad(&format!("tensor {} has unsupported dtype {}", t.name, t.dtype)));
        }
        if t.shape.iter().product::<usize>() != t.len {
            return Err(bad(&format!("tensor {} shape/length mismatch", t.name)));
        }
        let raw = payload
            .get(t.offset * 4..(t.offset + t.len) * 4)
            .ok_or_else(|| bad(&format!("tensor {} runs past the payload", t.name)))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        out.push((t.name, t.shape, values));
    }
    Ok((header.manifest, out))
}
