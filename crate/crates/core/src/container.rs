//! Binary container used for kernel caches and field snapshots.
//!
//! Layout: 8-byte magic `BBECONT1`, little-endian `u32` header length, a JSON
//! header, then the payload as little-endian `f64`. The header records the
//! payload length and its SHA-256 so truncated or edited files are rejected.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BBECONT1";

fn payload_bytes(payload: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(payload.len() * 8);
    for x in payload {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    bytes
}

pub fn write_container(path: &Path, kind: &str, meta: Value, payload: &[f64]) -> Result<()> {
    let bytes = payload_bytes(payload);
    let header = json!({
        "kind": kind,
        "meta": meta,
        "payload_len": payload.len(),
        "payload_sha256": hex::encode(Sha256::digest(&bytes)),
    });
    let header = serde_json::to_vec(&header).map_err(|e| Error::Container(e.to_string()))?;
    let len = u32::try_from(header.len()).map_err(|_| Error::Container("header too large".into()))?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&len.to_le_bytes())?;
        f.write_all(&header)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Returns the `meta` header value and the payload.
pub fn read_container(path: &Path, kind: &str) -> Result<(Value, Vec<f64>)> {
    let raw = fs::read(path)?;
    let bad = |msg: &str| Error::Container(format!("{}: {msg}", path.display()));
    if raw.len() < 12 || &raw[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let len = u32::from_le_bytes(raw[8..12].try_into().expect("4 bytes")) as usize;
    let body = raw.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Value = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    if header["kind"] != kind {
        return Err(bad(&format!("expected a `{kind}` container")));
    }
    let count = header["payload_len"].as_u64().ok_or_else(|| bad("missing payload length"))? as usize;
    let bytes = &raw[12 + len..];
    if bytes.len() != count * 8 {
        return Err(bad("payload length mismatch"));
    }
    if header["payload_sha256"] != hex::encode(Sha256::digest(bytes)) {
        return Err(bad("payload checksum mismatch"));
    }
    let payload = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header["meta"].clone(), payload))
}
