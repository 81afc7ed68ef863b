//! Flat binary container for streaming attention captures between
//! processes.
//!
//! Layout: the magic `RTXA`, a little-endian `u32` version, a little-endian
//! `u64` header length, a UTF-8 JSON header, then the tensors as
//! little-endian `f32` in the order and at the offsets the header declares.
//! Offsets count `f32` elements from the start of the payload.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::record::{AttentionRecord, CaptureTag, CrossAttentionScores, SelfAttentionMap};
use crate::error::{Error, Result};
use crate::tensor::Grid;

pub const MAGIC: &[u8; 4] = b"RTXA";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    #[serde(rename = "self")]
    SelfAttn,
    Cross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub kind: TensorKind,
    pub layer: usize,
    pub head: usize,
    pub timestep: usize,
    pub t_norm: f64,
    /// `[rows, cols]`: pixels x pixels for self maps, tokens x pixels for
    /// cross scores.
    pub shape: [usize; 2],
    /// Spatial grid of a cross capture; self maps use the record grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub grid: [usize; 2],
    pub tensors: Vec<TensorEntry>,
}

fn entry(kind: TensorKind, tag: &CaptureTag, shape: (usize, usize), grid: Option<Grid>, offset: usize) -> TensorEntry {
    TensorEntry {
        kind,
        layer: tag.layer,
        head: tag.head,
        timestep: tag.timestep,
        t_norm: tag.t_norm,
        shape: [shape.0, shape.1],
        grid: grid.map(|(h, w)| [h, w]),
        offset,
    }
}

pub fn write_container<W: Write>(record: &AttentionRecord, mut out: W) -> Result<()> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for m in &record.self_maps {
        tensors.push(entry(TensorKind::SelfAttn, &m.tag, m.probs.dim(), None, offset));
        offset += m.probs.len();
    }
    for c in &record.cross {
        tensors.push(entry(TensorKind::Cross, &c.tag, c.scores.dim(), Some(c.grid), offset));
        offset += c.scores.len();
    }
    let header = serde_json::to_vec(&ContainerHeader {
        grid: [record.grid.0, record.grid.1],
        tensors,
    })?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let arrays = record
        .self_maps
        .iter()
        .map(|m| &m.probs)
        .chain(record.cross.iter().map(|c| &c.scores));
    let mut buf = Vec::new();
    for a in arrays {
        buf.clear();
        buf.extend(a.iter().flat_map(|v| v.to_le_bytes()));
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn encode_container(record: &AttentionRecord) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_container(record, &mut out)?;
    Ok(out)
}

pub fn read_container<R: Read>(mut input: R) -> Result<AttentionRecord> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Protocol("not an attention container (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Protocol(format!("unsupported container version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len =
        usize::try_from(u64::from_le_bytes(len)).map_err(|_| Error::Protocol("header length overflows".into()))?;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header)?;
    let header: ContainerHeader = serde_json::from_slice(&header)?;

    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() % 4 != 0 {
        return Err(Error::Protocol("payload is not a whole number of f32 values".into()));
    }
    let floats: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let grid = (header.grid[0], header.grid[1]);
    let mut record = AttentionRecord::new(grid);
    for (i, t) in header.tensors.iter().enumerate() {
        let n = t.shape[0] * t.shape[1];
        let data = floats
            .get(t.offset..t.offset + n)
            .ok_or_else(|| Error::Protocol(format!("tensor {i} runs past the payload")))?;
        let array = Array2::from_shape_vec((t.shape[0], t.shape[1]), data.to_vec())
            .map_err(|e| Error::Protocol(e.to_string()))?;
        let tag = CaptureTag {
            layer: t.layer,
            head: t.head,
            timestep: t.timestep,
            t_norm: t.t_norm,
        };
        match t.kind {
            TensorKind::SelfAttn => record.self_maps.push(SelfAttentionMap { tag, probs: array }),
            TensorKind::Cross => {
                let g = t.grid.map(|[h, w]| (h, w)).unwrap_or(grid);
                record.cross.push(CrossAttentionScores {
                    tag,
                    grid: g,
                    scores: array,
                });
            }
        }
    }
    record.validate()?;
    Ok(record)
}

pub fn decode_container(bytes: &[u8]) -> Result<AttentionRecord> {
    read_container(bytes)
}
