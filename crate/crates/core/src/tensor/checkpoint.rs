//! Binary checkpoint: `RFXCKPT1`, a u32 LE header length, a JSON header,
//! then contiguous f32 LE payload in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Matrix;

pub const MAGIC: &[u8; 8] = b"RFXCKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated checkpoint: expected {expected} bytes of {what}, found {found}")]
    Truncated { what: &'static str, expected: usize, found: usize },
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub variant: String,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    #[serde(default)]
    pub scale_scores: bool,
    pub tensors: Vec<TensorEntry>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Serializes named matrices; the `tensors` list in `header` is rebuilt from them.
pub fn encode_checkpoint(mut header: CheckpointHeader, tensors: &[(String, &Matrix<f32>)]) -> Vec<u8> {
    let mut offset = 0;
    header.tensors = tensors
        .iter()
        .map(|(name, m)| {
            let e = TensorEntry { name: name.clone(), shape: vec![m.rows(), m.cols()], offset };
            offset += m.data().len() * 4;
            e
        })
        .collect();
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in tensors {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<(String, Matrix<f32>)>), CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic(bytes[..bytes.len().min(8)].to_vec()));
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(CheckpointError::Truncated { what: "header length", expected: 4, found: rest.len() });
    }
    let header_len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
    let rest = &rest[4..];
    if rest.len() < header_len {
        return Err(CheckpointError::Truncated { what: "header", expected: header_len, found: rest.len() });
    }
    let version: serde_json::Value = serde_json::from_slice(&rest[..header_len])?;
    if let Some(found) = version.get("version").and_then(|v| v.as_u64()) {
        if found != VERSION as u64 {
            return Err(CheckpointError::VersionMismatch { found: found as u32 });
        }
    }
    let header: CheckpointHeader = serde_json::from_value(version)?;
    let payload = &rest[header_len..];

    let mut expected_offset = 0;
    for e in &header.tensors {
        if e.shape.len() != 2 {
            return Err(CheckpointError::Inconsistent(format!("tensor `{}` has rank {}", e.name, e.shape.len())));
        }
        if e.offset != expected_offset {
            return Err(CheckpointError::Inconsistent(format!(
                "tensor `{}` at offset {} but previous tensors end at {expected_offset}",
                e.name, e.offset
            )));
        }
        expected_offset += numel(&e.shape) * 4;
    }
    if payload.len() < expected_offset {
        return Err(CheckpointError::Truncated { what: "payload", expected: expected_offset, found: payload.len() });
    }
    if payload.len() > expected_offset {
        return Err(CheckpointError::Inconsistent(format!(
            "{} trailing payload bytes",
            payload.len() - expected_offset
        )));
    }
    let tensors = header
        .tensors
        .iter()
        .map(|e| {
            let n = numel(&e.shape);
            let data = payload[e.offset..e.offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            (e.name.clone(), Matrix::from_vec(e.shape[0], e.shape[1], data))
        })
        .collect();
    Ok((header, tensors))
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    header: CheckpointHeader,
    tensors: &[(String, &Matrix<f32>)],
) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(header, tensors))?;
    Ok(())
}

pub fn read_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(CheckpointHeader, Vec<(String, Matrix<f32>)>), CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> CheckpointHeader {
        CheckpointHeader {
            version: VERSION,
            variant: "two-attr".into(),
            layers: 1,
            heads: 1,
            d_model: 13,
            scale_scores: false,
            tensors: vec![],
        }
    }

    fn sample() -> Vec<u8> {
        let a = Matrix::from_vec(2, 3, vec![1.0f32, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]);
        let b = Matrix::from_vec(1, 1, vec![7.0f32]);
        encode_checkpoint(header(), &[("a".into(), &a), ("b".into(), &b)])
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let bytes = sample();
        let (h, tensors) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(h.tensors[1].offset, 24);
        let refs: Vec<_> = tensors.iter().map(|(n, m)| (n.clone(), m)).collect();
        assert_eq!(encode_checkpoint(h, &refs), bytes);
        assert_eq!(tensors[0].1.data()[5].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::BadMagic(_))));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = sample();
        bytes.pop();
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(CheckpointError::Truncated { what: "payload", .. })
        ));
        let a = Matrix::from_vec(10, 10, vec![0.5f32; 100]);
        let mut bytes = encode_checkpoint(header(), &[("a".into(), &a)]);
        bytes.truncate(bytes.len() - 4);
        match decode_checkpoint(&bytes) {
            Err(CheckpointError::Truncated { expected, found, .. }) => {
                assert_eq!((expected, found), (400, 396));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let json = br#"{"version":2,"variant":"two-attr","layers":1,"heads":1,"d_model":13,"tensors":[]}"#;
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(json);
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::VersionMismatch { found: 2 })));
    }

    #[test]
    fn offset_inconsistency() {
        let json = br#"{"version":1,"variant":"two-attr","layers":1,"heads":1,"d_model":13,"tensors":[{"name":"a","shape":[1,1],"offset":8}]}"#;
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(json);
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::Inconsistent(_))));
    }
}
