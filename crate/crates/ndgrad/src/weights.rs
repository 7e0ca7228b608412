//! `PALMW1` weights files.
//!
//! Layout: the line `PALMW1\n`, a little-endian `u64` byte length, that many
//! bytes of UTF-8 JSON `{"arch": <any>, "tensors": [{name, shape, offset,
//! len}]}`, then the payload of little-endian `f32` values. `offset` and
//! `len` are byte positions within the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Real, Tensor};

pub const MAGIC: &[u8] = b"PALMW1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    #[serde(default)]
    arch: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Decoded contents of a weights file.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightsFile {
    pub arch: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl WeightsFile {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn encode<'a, T: Real>(
    arch: &serde_json::Value,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    for (name, t) in tensors {
        let offset = payload.len() as u64;
        for &v in t.data() {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: payload.len() as u64 - offset,
        });
    }
    let index = Index {
        arch: arch.clone(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&index).expect("index serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8]) -> Result<WeightsFile> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("missing PALMW1 header"))?;
    if rest.len() < 8 {
        return Err(bad("truncated index length"));
    }
    let (len_bytes, rest) = rest.split_at(8);
    let json_len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes"));
    if json_len > rest.len() as u64 {
        return Err(bad(format!(
            "index length {json_len} exceeds remaining {} bytes",
            rest.len()
        )));
    }
    let (json, payload) = rest.split_at(json_len as usize);
    let text = std::str::from_utf8(json).map_err(|e| bad(format!("index is not UTF-8: {e}")))?;
    let index: Index =
        serde_json::from_str(text).map_err(|e| bad(format!("index JSON: {e}")))?;

    let mut seen = std::collections::HashSet::new();
    let mut tensors = Vec::with_capacity(index.tensors.len());
    for e in index.tensors {
        if !seen.insert(e.name.clone()) {
            return Err(bad(format!("duplicate tensor {}", e.name)));
        }
        if e.shape.is_empty() || e.shape.contains(&0) {
            return Err(bad(format!("tensor {} has shape {:?}", e.name, e.shape)));
        }
        let count = e
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| bad(format!("tensor {} shape overflows", e.name)))?;
        if count.checked_mul(4) != Some(e.len) {
            return Err(bad(format!(
                "tensor {}: len {} does not match shape {:?}",
                e.name, e.len, e.shape
            )));
        }
        let end = e
            .offset
            .checked_add(e.len)
            .filter(|&end| end <= payload.len() as u64)
            .ok_or_else(|| bad(format!("tensor {} lies outside the payload", e.name)))?;
        let raw = &payload[e.offset as usize..end as usize];
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((e.name, Tensor::new(&e.shape, data)?));
    }
    Ok(WeightsFile {
        arch: index.arch,
        tensors,
    })
}

pub fn save<'a, T: Real>(
    path: &Path,
    arch: &serde_json::Value,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    std::fs::write(path, encode(arch, tensors))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<WeightsFile> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let a = Tensor::<f32>::from_fn(&[2, 3], |i| (i as f32).sin() * 1e-3);
        let b = Tensor::<f32>::new(&[1], vec![f32::MIN_POSITIVE]).unwrap();
        let arch = serde_json::json!({"widths": [16, 32, 64]});
        let bytes = encode(&arch, [("a", &a), ("b.c", &b)]);
        assert!(bytes.starts_with(b"PALMW1\n"));
        let back = decode(&bytes).unwrap();
        assert_eq!(back.arch, arch);
        assert_eq!(back.get("a").unwrap(), &a);
        assert_eq!(back.get("b.c").unwrap(), &b);
        assert_eq!(encode(&back.arch, back.tensors.iter().map(|(n, t)| (n.as_str(), t))), bytes);
    }

    #[test]
    fn rejects_corrupt_inputs() {
        let a = Tensor::<f32>::zeros(&[4]);
        let bytes = encode(&serde_json::Value::Null, [("a", &a)]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"PALMW2\n").is_err());
        let mut huge = MAGIC.to_vec();
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&huge).is_err());
    }
}
