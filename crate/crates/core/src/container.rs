//! Binary container shared by embedding, reducer and checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic: [u8; 4] | version: u32 | rows: u32 | cols: u32
//! rows·cols × f32, row-major
//! UTF-8 JSON trailer
//! trailer length: u64
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Raw contents of a container before the trailer is interpreted.
#[derive(Debug, Clone)]
pub struct Container {
    pub rows: usize,
    pub cols: usize,
    pub payload: Vec<f32>,
    pub trailer: Vec<u8>,
    pub trailer_offset: u64,
}

impl Container {
    /// Parses the trailer into `T`, reporting failures at the trailer's offset.
    pub fn trailer_as<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_slice(&self.trailer).map_err(|e| Error::Format {
            offset: self.trailer_offset,
            message: format!("invalid JSON trailer: {e}"),
        })
    }
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn encode<T: Serialize>(
    magic: &[u8; 4],
    rows: usize,
    cols: usize,
    payload: &[f32],
    trailer: &T,
) -> Result<Vec<u8>> {
    if payload.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "payload of {} values for {rows}x{cols}",
            payload.len()
        )));
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Dimension(format!("{what} {v} exceeds u32")))
    };
    let json = serde_json::to_vec(trailer)?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() * 4 + json.len() + 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(rows, "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols, "column count")?.to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&json);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    Ok(out)
}

pub fn decode(magic: &[u8; 4], bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(format_err(
            0,
            format!("expected magic {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let payload_len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err(8, "payload size overflows"))?;
    let payload_end = HEADER_LEN + payload_len;
    if bytes.len() < payload_end + 8 {
        return Err(format_err(
            bytes.len(),
            format!("truncated: {rows}x{cols} payload needs at least {} bytes", payload_end + 8),
        ));
    }
    let len_at = bytes.len() - 8;
    let trailer_len = u64::from_le_bytes(bytes[len_at..].try_into().unwrap());
    if trailer_len != (len_at - payload_end) as u64 {
        return Err(format_err(
            len_at,
            format!(
                "trailer length {trailer_len} disagrees with the {} bytes after the payload",
                len_at - payload_end
            ),
        ));
    }
    let mut payload = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes[HEADER_LEN..payload_end].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(format_err(HEADER_LEN + 4 * i, "non-finite value in payload"));
        }
        payload.push(v);
    }
    Ok(Container {
        rows,
        cols,
        payload,
        trailer: bytes[payload_end..len_at].to_vec(),
        trailer_offset: payload_end as u64,
    })
}

pub fn write_file<T: Serialize>(
    path: &Path,
    magic: &[u8; 4],
    rows: usize,
    cols: usize,
    payload: &[f32],
    trailer: &T,
) -> Result<()> {
    let bytes = encode(magic, rows, cols, payload, trailer)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_file(path: &Path, magic: &[u8; 4]) -> Result<Container> {
    decode(magic, &fs::read(path)?)
}
