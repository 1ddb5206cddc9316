//! `.ckpt` file format.
//!
//! ```text
//! offset  size  content
//! 0       8     magic  b"WISECKPT"
//! 8       1     version (1)
//! 9       8     header length H, u64 little-endian
//! 17      H     UTF-8 JSON header {"layout": [...], "meta": {...}, "total_len": n}
//! 17+H    8n    values, f64 little-endian, layout order
//! ```
//!
//! Trailing bytes after the values are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Checkpoint, CheckpointMeta, ParamEntry, ParamLayout};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"WISECKPT";
pub const VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    layout: Vec<ParamEntry>,
    meta: CheckpointMeta,
    total_len: u64,
}

pub fn encode(c: &Checkpoint) -> Vec<u8> {
    let header = Header {
        layout: c.layout().entries().to_vec(),
        meta: c.meta.clone(),
        total_len: c.values().len() as u64,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(17 + json.len() + 8 * c.values().len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in c.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let codec = |m: &str| Error::Codec(m.to_string());
    if bytes.len() < 17 {
        return Err(codec("file shorter than fixed preamble"));
    }
    if &bytes[..8] != MAGIC {
        return Err(codec("bad magic bytes"));
    }
    if bytes[8] != VERSION {
        return Err(Error::Codec(format!("unsupported version {}", bytes[8])));
    }
    let header_len = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|h| h.checked_add(17))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| codec("header length exceeds file size"))?;
    let header: Header = serde_json::from_slice(&bytes[17..header_end])
        .map_err(|e| Error::Codec(format!("malformed header: {e}")))?;
    let layout = ParamLayout::from_entries(header.layout)
        .map_err(|e| Error::Codec(format!("invalid layout: {e}")))?;
    if layout.total_len() as u64 != header.total_len {
        return Err(Error::Codec(format!(
            "header total_len {} disagrees with layout total {}",
            header.total_len,
            layout.total_len()
        )));
    }
    let body = &bytes[header_end..];
    let expected = layout.total_len() * 8;
    if body.len() != expected {
        return Err(Error::Codec(format!(
            "expected {expected} value bytes, found {}",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Codec(format!("non-finite value at index {i}")));
    }
    Checkpoint::new(layout, values, header.meta)
}

pub fn save(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(c)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let layout = ParamLayout::new([("enc.0.w", vec![2, 2]), ("head", vec![2, 3])]).unwrap();
        let values = (0..10).map(|i| (i as f64).sin() * 1e-3).collect();
        let meta = CheckpointMeta {
            seed: 99,
            step: 1234,
            tag: "fine-tuned \"θ1\"".into(),
        };
        Checkpoint::new(layout, values, meta).unwrap()
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let c = sample();
        save(&c, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode(&back), encode(&c));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = encode(&sample());
        for cut in [0, 5, 16, 30, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Codec(_))), "cut {cut}");
        }
    }

    #[test]
    fn mismatched_total_len_is_rejected() {
        let c = sample();
        let header = Header {
            layout: c.layout().entries().to_vec(),
            meta: c.meta.clone(),
            total_len: 11,
        };
        let json = serde_json::to_vec(&header).unwrap();
        let mut bytes = MAGIC.to_vec();
        bytes.push(VERSION);
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for v in c.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(decode(&bytes), Err(Error::Codec(_))));
    }

    #[test]
    fn nonfinite_and_bad_magic_rejected() {
        let mut bytes = encode(&sample());
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::INFINITY.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Codec(_))));
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Codec(_))));
        let mut bytes = encode(&sample());
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::Codec(_))));
    }

    proptest! {
        #[test]
        fn bit_exact_for_any_finite_pattern(bits in proptest::collection::vec(any::<u64>(), 1..40)) {
            let values: Vec<f64> = bits
                .into_iter()
                .map(f64::from_bits)
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect();
            let layout = ParamLayout::new([("w", vec![values.len()])]).unwrap();
            let c = Checkpoint::new(layout, values.clone(), CheckpointMeta::default()).unwrap();
            let back = decode(&encode(&c)).unwrap();
            let a: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
