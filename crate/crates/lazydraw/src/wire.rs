//! Little-endian binary primitives shared by the dataset and index containers.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) struct Reader<'a, R: Read> {
    inner: R,
    path: &'a Path,
    offset: u64,
}

impl<'a, R: Read> Reader<'a, R> {
    pub fn new(inner: R, path: &'a Path) -> Self {
        Reader {
            inner,
            path,
            offset: 0,
        }
    }

    pub fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::MalformedFile {
            path: self.path.to_path_buf(),
            reason: reason.into(),
            offset: self.offset,
        }
    }

    pub fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => self.malformed("unexpected end of file"),
                _ => Error::io(self.path, e),
            })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    /// Returns None at a clean end of input, an error on a partial record.
    pub fn try_u32(&mut self) -> Result<Option<u32>> {
        let mut buf = [0u8; 4];
        let mut filled = 0;
        while filled < 4 {
            let got = self
                .inner
                .read(&mut buf[filled..])
                .map_err(|e| Error::io(self.path, e))?;
            if got == 0 {
                if filled == 0 {
                    return Ok(None);
                }
                return Err(self.malformed("truncated record"));
            }
            filled += got;
        }
        self.offset += 4;
        Ok(Some(u32::from_le_bytes(buf)))
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut buf = [0u8; 8];
        self.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    }

    pub fn f32_vec(&mut self, count: usize) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; count * 4];
        self.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn u32_vec(&mut self, count: usize) -> Result<Vec<u32>> {
        let mut bytes = vec![0u8; count * 4];
        self.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn u64_vec(&mut self, count: usize) -> Result<Vec<u64>> {
        let mut bytes = vec![0u8; count * 8];
        self.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub(crate) struct Writer<'a, W: Write> {
    inner: W,
    path: &'a Path,
}

impl<'a, W: Write> Writer<'a, W> {
    pub fn new(inner: W, path: &'a Path) -> Self {
        Writer { inner, path }
    }

    pub fn bytes(&mut self, buf: &[u8]) -> Result<()> {
        self.inner.write_all(buf).map_err(|e| Error::io(self.path, e))
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f32_slice(&mut self, vs: &[f32]) -> Result<()> {
        for &v in vs {
            self.f32(v)?;
        }
        Ok(())
    }

    pub fn u32_slice(&mut self, vs: &[u32]) -> Result<()> {
        for &v in vs {
            self.u32(v)?;
        }
        Ok(())
    }

    pub fn u64_slice(&mut self, vs: &[u64]) -> Result<()> {
        for &v in vs {
            self.u64(v)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(self.path, e))
    }
}
