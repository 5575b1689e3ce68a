//! Model checkpointing: every named parameter with its optimizer state in
//! one file, restored bit-exactly.
//!
//! Layout: a plain-text manifest (format version, embedding dimension,
//! tower structure, fusion mode, dataset roster, one line per tensor with
//! its shape, optimizer step count, and offset), then a `data N` line, then
//! N raw little-endian 64-bit floats. Each tensor occupies three
//! consecutive blocks in the payload — value, first-moment, second-moment —
//! so loading reconstructs the optimizer exactly where it stopped.

use crate::numerics::{ParamStore, Tensor};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

const MAGIC: &str = "bridgerec-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Corrupt(String),
}

/// Run-level metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub k: usize,
    pub structure: String,
    pub fusion_mode: String,
    /// (name, user count, item count) per dataset, in id order.
    pub datasets: Vec<(String, usize, usize)>,
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.to_path_buf(), source }
}

/// Write the manifest and the flat parameter payload.
pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    store: &ParamStore,
) -> Result<(), CheckpointError> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("k\t{}\n", meta.k));
    header.push_str(&format!("structure\t{}\n", meta.structure));
    header.push_str(&format!("fusion\t{}\n", meta.fusion_mode));
    header.push_str(&format!("datasets\t{}\n", meta.datasets.len()));
    for (i, (name, m, n)) in meta.datasets.iter().enumerate() {
        header.push_str(&format!("dataset\t{i}\t{m}\t{n}\t{name}\n"));
    }

    let names: Vec<&str> = store.names().collect();
    header.push_str(&format!("tensors\t{}\n", names.len()));
    let mut payload: Vec<f64> = Vec::new();
    for name in names {
        assert!(
            !name.chars().any(char::is_whitespace),
            "tensor names must be whitespace-free: {name:?}"
        );
        let (value, m, v, step) = store.entry_state(name).expect("name from this store");
        let (rows, cols) = value.shape();
        header.push_str(&format!("tensor\t{name}\t{rows}\t{cols}\t{step}\t{}\n", payload.len()));
        payload.extend_from_slice(value.data());
        payload.extend_from_slice(m.data());
        payload.extend_from_slice(v.data());
    }
    header.push_str(&format!("data\t{}\n", payload.len()));

    let mut bytes = header.into_bytes();
    bytes.reserve(payload.len() * 8);
    for value in &payload {
        bytes.extend_from_slice(&value.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&bytes).map_err(io_err(path))
}

/// Read a checkpoint back into a fresh parameter store.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, ParamStore), CheckpointError> {
    let bytes = fs::read(path).map_err(io_err(path))?;

    // split the text header from the binary payload at the `data N` line
    let mut lines: Vec<&str> = Vec::new();
    let mut cursor = 0usize;
    let payload_start = loop {
        let rest = &bytes[cursor..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("missing data line"))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| corrupt("non-UTF-8 header line"))?;
        cursor += nl + 1;
        lines.push(line);
        if line.starts_with("data\t") {
            break cursor;
        }
    };

    let mut it = lines.iter();
    if it.next() != Some(&MAGIC) {
        return Err(corrupt("bad magic line"));
    }
    let mut field = |key: &str| -> Result<String, CheckpointError> {
        let line = it.next().ok_or_else(|| corrupt(format!("missing {key} line")))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix('\t'))
            .map(str::to_string)
            .ok_or_else(|| corrupt(format!("expected {key} line, got {line:?}")))
    };
    let k: usize = field("k")?.parse().map_err(|_| corrupt("bad k"))?;
    let structure = field("structure")?;
    let fusion_mode = field("fusion")?;
    let n_datasets: usize = field("datasets")?.parse().map_err(|_| corrupt("bad dataset count"))?;
    let mut datasets = Vec::with_capacity(n_datasets);
    for i in 0..n_datasets {
        let line = field("dataset")?;
        let mut parts = line.splitn(4, '\t');
        let idx: usize = parts
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| corrupt("bad dataset index"))?;
        if idx != i {
            return Err(corrupt(format!("dataset lines out of order at {idx}")));
        }
        let m: usize =
            parts.next().and_then(|p| p.parse().ok()).ok_or_else(|| corrupt("bad dataset m"))?;
        let n: usize =
            parts.next().and_then(|p| p.parse().ok()).ok_or_else(|| corrupt("bad dataset n"))?;
        let name = parts.next().ok_or_else(|| corrupt("missing dataset name"))?;
        datasets.push((name.to_string(), m, n));
    }
    let n_tensors: usize = field("tensors")?.parse().map_err(|_| corrupt("bad tensor count"))?;
    let mut tensor_lines = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        tensor_lines.push(field("tensor")?);
    }
    let total: usize = field("data")?.parse().map_err(|_| corrupt("bad data length"))?;

    let payload_bytes = &bytes[payload_start..];
    if payload_bytes.len() != total * 8 {
        return Err(corrupt(format!(
            "payload holds {} bytes, manifest promises {}",
            payload_bytes.len(),
            total * 8
        )));
    }
    let payload: Vec<f64> = payload_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut store = ParamStore::new();
    for line in tensor_lines {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 5 {
            return Err(corrupt(format!("bad tensor line {line:?}")));
        }
        let name = parts[0];
        let rows: usize = parts[1].parse().map_err(|_| corrupt("bad tensor rows"))?;
        let cols: usize = parts[2].parse().map_err(|_| corrupt("bad tensor cols"))?;
        let step: u64 = parts[3].parse().map_err(|_| corrupt("bad tensor step"))?;
        let offset: usize = parts[4].parse().map_err(|_| corrupt("bad tensor offset"))?;
        let len = rows * cols;
        if offset + 3 * len > payload.len() {
            return Err(corrupt(format!("tensor {name} overruns payload")));
        }
        let block = |b: usize| {
            Tensor::from_vec(rows, cols, payload[offset + b * len..offset + (b + 1) * len].to_vec())
        };
        store.set_entry_state(name, block(0), block(1), block(2), step);
    }

    Ok((CheckpointMeta { k, structure, fusion_mode, datasets }, store))
}

// ============================================================
// Tests
// ============================================================
