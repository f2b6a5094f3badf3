//! Little-endian binary readers and writers shared by the on-disk formats.
//!
//! Every serialized artifact (store, embeddings, checkpoints) starts with an
//! ASCII magic tag followed by a format version, and is written through these
//! helpers so that identical inputs produce byte-identical files.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(inner: W) -> Self {
        BinWriter { inner }
    }

    pub fn magic(&mut self, tag: &str) -> std::io::Result<()> {
        self.inner.write_all(tag.as_bytes())
    }

    pub fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn i64(&mut self, v: i64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64_slice(&mut self, vs: &[f64]) -> std::io::Result<()> {
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }

    pub fn str(&mut self, s: &str) -> std::io::Result<()> {
        self.u32(s.len() as u32)?;
        self.inner.write_all(s.as_bytes())
    }

    pub fn finish(self) -> W {
        self.inner
    }
}

pub struct BinReader<R: Read> {
    inner: R,
    path: std::path::PathBuf,
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R, path: &Path) -> Self {
        BinReader {
            inner,
            path: path.to_path_buf(),
        }
    }

    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            msg: msg.into(),
        }
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| self.fail("unexpected end of file"))
    }

    /// Reads and checks the magic tag, returning an error naming both
    /// the expected and the found tag.
    pub fn expect_magic(&mut self, tag: &str) -> Result<()> {
        let mut buf = vec![0u8; tag.len()];
        self.fill(&mut buf)?;
        if buf != tag.as_bytes() {
            return Err(self.fail(format!(
                "bad magic: expected {:?}, found {:?}",
                tag,
                String::from_utf8_lossy(&buf)
            )));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.fill(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.fill(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    pub fn i64(&mut self) -> Result<i64> {
        let mut buf = [0u8; 8];
        self.fill(&mut buf)?;
        Ok(i64::from_le_bytes(buf))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut buf = [0u8; 8];
        self.fill(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 24 {
            return Err(self.fail(format!("implausible string length {len}")));
        }
        let mut buf = vec![0u8; len];
        self.fill(&mut buf)?;
        String::from_utf8(buf).map_err(|_| self.fail("string is not valid utf-8"))
    }
}
