//! Flat binary container: magic, version, JSON header, f64 payload.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic   |
//! | 4     | format version (u32) |
//! | 8     | header length in bytes (u64) |
//! | n     | UTF-8 JSON header |
//! | 8·m   | payload, little-endian f64 |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

pub fn encode<H: Serialize>(
    magic: &[u8; 8],
    version: u32,
    header: &H,
    payload: &[f64],
) -> Result<Vec<u8>> {
    let head =
        serde_json::to_vec(header).map_err(|e| Error::config(format!("header encode: {e}")))?;
    let mut buf = Vec::with_capacity(20 + head.len() + 8 * payload.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&version.to_le_bytes());
    buf.extend_from_slice(&(head.len() as u64).to_le_bytes());
    buf.extend_from_slice(&head);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode<H: DeserializeOwned>(
    path: &Path,
    bytes: &[u8],
    magic: &[u8; 8],
    version: u32,
) -> Result<(H, Vec<f64>)> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 20 {
        return Err(bad("truncated preamble"));
    }
    if &bytes[..8] != magic {
        return Err(bad("wrong magic bytes"));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != version {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: version.to_string(),
            found: found.to_string(),
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen || !(body.len() - hlen).is_multiple_of(8) {
        return Err(bad("header length inconsistent with file size"));
    }
    let header: H =
        serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
    let payload = body[hlen..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let bytes = encode(b"TESTFILE", 3, &serde_json::json!({"a": 1}), &[1.5, -2.0]).unwrap();
        let (h, p): (serde_json::Value, _) =
            decode(Path::new("x"), &bytes, b"TESTFILE", 3).unwrap();
        assert_eq!(h["a"], 1);
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn version_and_magic_are_checked() {
        let bytes = encode(b"TESTFILE", 3, &serde_json::json!({}), &[]).unwrap();
        let r: Result<(serde_json::Value, _)> = decode(Path::new("x"), &bytes, b"TESTFILE", 4);
        assert!(matches!(r, Err(Error::VersionMismatch { .. })));
        let r: Result<(serde_json::Value, _)> = decode(Path::new("x"), &bytes, b"OTHERMAG", 3);
        assert!(matches!(r, Err(Error::Format { .. })));
        let r: Result<(serde_json::Value, _)> =
            decode(Path::new("x"), &bytes[..10], b"TESTFILE", 3);
        assert!(r.is_err());
    }
}
