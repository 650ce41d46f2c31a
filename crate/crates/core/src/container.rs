//! Shared binary container: `"UAAI"` magic, `u16` version, `u32`
//! length-prefixed JSON manifest, then little-endian `f32` payload.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UAAI";

/// Reader wrapper that tracks the byte offset for error reporting.
pub struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let start = self.offset;
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::format(
                        start + filled as u64,
                        format!("truncated while reading {what}"),
                    ))
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn read_f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; count * 4];
        self.read_exact_at(&mut bytes, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// Fails unless the stream is exhausted.
    pub fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::format(self.offset, "unexpected trailing bytes")),
        }
    }
}

pub fn write_header<W: Write>(w: &mut W, version: u16, manifest: &[u8]) -> Result<()> {
    let len = u32::try_from(manifest.len())
        .map_err(|_| Error::InvalidInput("manifest larger than 4 GiB".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(manifest)?;
    Ok(())
}

/// Reads magic, checks the version, and returns the manifest bytes.
pub fn read_header<R: Read>(r: &mut OffsetReader<R>, supported: u16) -> Result<Vec<u8>> {
    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::format(0, format!("bad magic bytes {magic:?}")));
    }
    let mut v = [0u8; 2];
    r.read_exact_at(&mut v, "version")?;
    let version = u16::from_le_bytes(v);
    if version != supported {
        return Err(Error::format(
            4,
            format!("unsupported format version {version} (expected {supported})"),
        ));
    }
    let mut l = [0u8; 4];
    r.read_exact_at(&mut l, "manifest length")?;
    let len = u32::from_le_bytes(l) as usize;
    let mut manifest = vec![0u8; len];
    r.read_exact_at(&mut manifest, "manifest")?;
    Ok(manifest)
}

pub fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn parse_manifest<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes)
        .map_err(|e| Error::format(10, format!("manifest is not valid JSON for this format: {e}")))
}
