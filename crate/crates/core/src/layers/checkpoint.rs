//! Named-tensor files: one line of JSON index, a newline, then tensor blobs.

use std::fs;
use std::path::Path;

use rfl_tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    offset: usize,
    length: usize,
}

pub fn encode(tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut blobs = Vec::new();
    let mut index = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let blob = t.encode();
        index.push(IndexEntry {
            name: name.to_string(),
            offset: blobs.len(),
            length: blob.len(),
        });
        blobs.extend_from_slice(&blob);
    }
    let mut out = serde_json::to_vec(&index).expect("index serializes");
    out.push(b'\n');
    out.extend_from_slice(&blobs);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing index line".into()))?;
    let index: Vec<IndexEntry> = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::Checkpoint(format!("index: {e}")))?;
    let blobs = &bytes[split + 1..];
    index
        .into_iter()
        .map(|e| {
            let end = e
                .offset
                .checked_add(e.length)
                .filter(|&end| end <= blobs.len());
            let Some(end) = end else {
                return Err(Error::Checkpoint(format!(
                    "`{}` runs past end of file",
                    e.name
                )));
            };
            let (t, used) = Tensor::decode(&blobs[e.offset..end])?;
            if used != e.length {
                return Err(Error::Checkpoint(format!("`{}` length mismatch", e.name)));
            }
            Ok((e.name, t))
        })
        .collect()
}

/// Writes every parameter and buffer in store order.
pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let named: Vec<(&str, &Tensor)> = store
        .entries()
        .map(|(_, e)| (e.name.as_str(), &e.tensor))
        .collect();
    fs::write(path, encode(&named)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Copies tensors into the store. `rename` maps a file name to a store name,
/// or `None` to skip it. Returns how many tensors were copied.
pub fn restore(
    store: &mut ParamStore,
    tensors: &[(String, Tensor)],
    rename: impl Fn(&str) -> Option<String>,
) -> Result<usize> {
    let mut copied = 0;
    for (name, t) in tensors {
        let Some(target) = rename(name) else { continue };
        let id = store
            .find(&target)
            .ok_or_else(|| Error::Checkpoint(format!("no parameter `{target}` for `{name}`")))?;
        let dst = store.get_mut(id);
        if dst.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "`{target}` has shape {:?}, file has {:?}",
                dst.shape(),
                t.shape()
            )));
        }
        dst.data_mut().copy_from_slice(t.data());
        copied += 1;
    }
    Ok(copied)
}
