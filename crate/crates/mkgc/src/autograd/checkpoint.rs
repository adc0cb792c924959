//! Binary tensor-file format used by checkpoints.
//!
//! Layout: 4 magic bytes, a u32 LE format version, a u64 LE header
//! length, a JSON header (tensor names, shapes, element offsets, plus a
//! free-form metadata map), then all tensor payloads as little-endian
//! f64 words. Values round-trip bit-exactly, including NaN payloads and
//! negative zero.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MKGT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset into the payload, counted in f64 elements.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<HeaderEntry>,
    meta: BTreeMap<String, String>,
}

/// Write named tensors and metadata to `path`. Tensor order in the file
/// follows the map's (sorted) key order, so identical inputs produce
/// byte-identical files.
pub fn write_tensor_file(
    path: &Path,
    tensors: &BTreeMap<String, Tensor>,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        entries.push(HeaderEntry {
            name: name.clone(),
            rows: t.rows,
            cols: t.cols,
            offset,
        });
        offset += t.data.len() as u64;
    }
    let header = serde_json::to_vec(&Header {
        tensors: entries,
        meta: meta.clone(),
    })?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for t in tensors.values() {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a file written by [`write_tensor_file`].
pub fn read_tensor_file(
    path: &Path,
) -> Result<(BTreeMap<String, Tensor>, BTreeMap<String, String>)> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{}: file too short for magic", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {:?}, not a tensor file",
            path.display(),
            magic
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header", path.display())))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: malformed header: {e}", path.display())))?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: payload length {} is not a multiple of 8",
            path.display(),
            payload.len()
        )));
    }
    let words: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut tensors = BTreeMap::new();
    for e in header.tensors {
        let n = e.rows * e.cols;
        let start = e.offset as usize;
        let end = start + n;
        if end > words.len() {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {:?} extends past payload ({} > {})",
                path.display(),
                e.name,
                end,
                words.len()
            )));
        }
        tensors.insert(
            e.name,
            Tensor {
                rows: e.rows,
                cols: e.cols,
                data: words[start..end].to_vec(),
            },
        );
    }
    Ok((tensors, header.meta))
}
