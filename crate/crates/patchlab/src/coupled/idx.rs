//! IDX container parsing (the MNIST on-disk format).
//!
//! Header: two zero bytes, a dtype byte (0x08 = unsigned byte), a
//! dimension-count byte, then that many big-endian u32 dimensions,
//! followed by the raw payload.

use std::path::Path;

use crate::error::{Error, Result};

/// Parsed IDX payload: dimensions plus raw bytes.
#[derive(Clone, Debug)]
pub struct IdxData {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxData {
    pub fn element_count(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    /// Bytes per leading-dimension element.
    pub fn record_len(&self) -> usize {
        self.dims.iter().skip(1).product::<usize>().max(1)
    }
}

pub fn read_idx(path: &Path) -> Result<IdxData> {
    let bytes = std::fs::read(path)?;
    parse_idx(&bytes)
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let fail = |offset: u64, message: &str| Error::Format {
        offset,
        message: message.into(),
    };
    if bytes.len() < 4 {
        return Err(fail(bytes.len() as u64, "truncated magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(fail(0, "bad magic: first two bytes must be zero"));
    }
    if bytes[2] != 0x08 {
        return Err(fail(2, "unsupported dtype: expected 0x08 (unsigned byte)"));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(fail(3, "zero-dimensional payload"));
    }
    let header_len = 4 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(fail(bytes.len() as u64, "truncated dimension list"));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 4 + 4 * i;
        let d = u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
        dims.push(d as usize);
    }
    let expected: usize = dims.iter().product();
    let payload = &bytes[header_len..];
    if payload.len() != expected {
        return Err(fail(
            (header_len + payload.len().min(expected)) as u64,
            &format!("payload holds {} bytes, header promises {}", payload.len(), expected),
        ));
    }
    Ok(IdxData {
        dims,
        data: payload.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut out = vec![0, 0, 0x08, dims.len() as u8];
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn image_file_layout() {
        // Header promising (60000, 28, 28) must yield 60000 records of 784
        // bytes. We verify on a fabricated file with the same layout but a
        // small leading dimension to keep the fixture tiny.
        let bytes = encode(&[3, 28, 28], &vec![7u8; 3 * 784]);
        let idx = parse_idx(&bytes).unwrap();
        assert_eq!(idx.dims, vec![3, 28, 28]);
        assert_eq!(idx.element_count(), 3);
        assert_eq!(idx.record_len(), 784);
    }

    #[test]
    fn label_file_layout() {
        let bytes = encode(&[5], &[0, 1, 2, 3, 4]);
        let idx = parse_idx(&bytes).unwrap();
        assert_eq!(idx.dims, vec![5]);
        assert_eq!(idx.record_len(), 1);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = encode(&[4, 28, 28], &vec![0u8; 4 * 784]);
        bytes.truncate(bytes.len() - 100);
        match parse_idx(&bytes) {
            Err(Error::Format { offset, .. }) => {
                assert_eq!(offset, (4 + 4 * 3 + 4 * 784 - 100) as u64);
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let bytes = vec![1, 0, 0x08, 1, 0, 0, 0, 0];
        assert!(matches!(parse_idx(&bytes), Err(Error::Format { offset: 0, .. })));
        let bytes = vec![0, 0, 0x09, 1, 0, 0, 0, 0];
        assert!(matches!(parse_idx(&bytes), Err(Error::Format { offset: 2, .. })));
    }
}
