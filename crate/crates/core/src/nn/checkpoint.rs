//! Model checkpoints: a structured-text header describing the architecture
//! and tensor layout, a delimiter line, then the raw parameter block as
//! little-endian f64.

use super::model::{ArchitectureConfig, SequenceModel};
use super::NnError;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const DELIMITER: &[u8] = b"\n#---parameters---\n";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    architecture: ArchitectureConfig,
    tensor: Vec<TensorMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    len: usize,
}

/// A loaded checkpoint, not yet bound to a model.
#[derive(Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub architecture: ArchitectureConfig,
    pub tensors: Vec<(String, Vec<f64>)>,
}

pub fn save_checkpoint<M: SequenceModel>(
    path: &Path,
    model: &mut M,
    arch: &ArchitectureConfig,
) -> Result<(), NnError> {
    let kind = model.kind().to_string();
    let names = model.param_names();
    let lens: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        kind,
        architecture: arch.clone(),
        tensor: names
            .iter()
            .zip(&lens)
            .map(|(n, &len)| TensorMeta {
                name: n.clone(),
                len,
            })
            .collect(),
    };
    let text = toml::to_string_pretty(&header)
        .map_err(|e| NnError::Parse(format!("header serialize: {e}")))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.write_all(DELIMITER)?;
    for p in model.params_mut() {
        for v in &p.w {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let split = find_delimiter(&bytes)
        .ok_or_else(|| NnError::Parse("missing parameter delimiter".into()))?;
    let text = std::str::from_utf8(&bytes[..split])
        .map_err(|_| NnError::Parse("header is not UTF-8".into()))?;
    let header: Header =
        toml::from_str(text).map_err(|e| NnError::Parse(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(NnError::Parse(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    let mut cursor = split + DELIMITER.len();
    let mut tensors = Vec::with_capacity(header.tensor.len());
    for meta in &header.tensor {
        let need = meta.len * 8;
        if cursor + need > bytes.len() {
            return Err(NnError::Parse(format!(
                "tensor {} truncated: wanted {need} bytes",
                meta.name
            )));
        }
        let vals: Vec<f64> = bytes[cursor..cursor + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        cursor += need;
        tensors.push((meta.name.clone(), vals));
    }
    if cursor != bytes.len() {
        return Err(NnError::Parse("trailing bytes after parameter block".into()));
    }
    Ok(Checkpoint {
        kind: header.kind,
        architecture: header.architecture,
        tensors,
    })
}

/// Copies checkpoint tensors into a freshly constructed model; names and
/// lengths must match the model's parameter layout exactly.
pub fn apply_checkpoint<M: SequenceModel>(ckpt: &Checkpoint, model: &mut M) -> Result<(), NnError> {
    if ckpt.kind != model.kind() {
        return Err(NnError::Parse(format!(
            "checkpoint is for {}, model is {}",
            ckpt.kind,
            model.kind()
        )));
    }
    let names = model.param_names();
    if names.len() != ckpt.tensors.len() {
        return Err(NnError::Parse(format!(
            "checkpoint has {} tensors, model has {}",
            ckpt.tensors.len(),
            names.len()
        )));
    }
    let mut params = model.params_mut();
    for (i, (name, vals)) in ckpt.tensors.iter().enumerate() {
        if *name != names[i] {
            return Err(NnError::Parse(format!(
                "tensor {i} is {name}, model expects {}",
                names[i]
            )));
        }
        if vals.len() != params[i].len() {
            return Err(NnError::Parse(format!(
                "tensor {name} has {} values, model expects {}",
                vals.len(),
                params[i].len()
            )));
        }
        params[i].w.copy_from_slice(vals);
    }
    Ok(())
}

fn find_delimiter(bytes: &[u8]) -> Option<usize> {
    bytes
        .windows(DELIMITER.len())
        .position(|w| w == DELIMITER)
}
