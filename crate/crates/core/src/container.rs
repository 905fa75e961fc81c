//! Versioned binary container: a magic line, a JSON header line, then the
//! named tensors as little-endian `f64`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    meta: M,
    tensors: Vec<Entry>,
}

pub fn encode<M: Serialize>(magic: &str, meta: &M, tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::contract(format!("tensor {} has shape {:?} but {} values", t.name, t.shape, t.data.len())));
        }
    }
    let header = Header {
        meta,
        tensors: tensors
            .iter()
            .map(|t| Entry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&header).map_err(|e| Error::contract(format!("header serialization: {e}")))?;
    let mut out = Vec::with_capacity(magic.len() + json.len() + 2 + 8 * tensors.iter().map(|t| t.data.len()).sum::<usize>());
    out.extend_from_slice(magic.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn line(bytes: &[u8], start: usize) -> Result<(&str, usize)> {
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| start + p)
        .ok_or_else(|| Error::Parse {
            offset: start,
            message: "unterminated header line".into(),
        })?;
    let text = std::str::from_utf8(&bytes[start..end]).map_err(|_| Error::Parse {
        offset: start,
        message: "header is not UTF-8".into(),
    })?;
    Ok((text, end + 1))
}

pub fn decode<M: DeserializeOwned>(magic: &str, bytes: &[u8]) -> Result<(M, Vec<NamedTensor>)> {
    let (first, next) = line(bytes, 0)?;
    if first != magic {
        return Err(Error::Parse {
            offset: 0,
            message: format!("expected {magic:?}, found {first:?}"),
        });
    }
    let (json, mut pos) = line(bytes, next)?;
    let header: Header<M> = serde_json::from_str(json).map_err(|e| Error::Parse {
        offset: next + e.column().saturating_sub(1),
        message: format!("header: {e}"),
    })?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let count: usize = entry.shape.iter().product();
        let end = pos + count * 8;
        if end > bytes.len() {
            return Err(Error::Parse {
                offset: pos,
                message: format!("tensor {} truncated: needs {} bytes, {} remain", entry.name, count * 8, bytes.len() - pos),
            });
        }
        let data = bytes[pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push(NamedTensor {
            name: entry.name,
            shape: entry.shape,
            data,
        });
        pos = end;
    }
    if pos != bytes.len() {
        return Err(Error::Parse {
            offset: pos,
            message: format!("{} trailing bytes", bytes.len() - pos),
        });
    }
    Ok((header.meta, tensors))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
