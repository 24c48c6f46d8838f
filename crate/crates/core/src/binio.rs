//! Little-endian helpers shared by the on-disk formats (datastore, IVF index,
//! PCA model, gate weights). Every format opens with a 6-byte ASCII magic.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) const MAGIC_LEN: usize = 6;

pub(crate) struct ByteWriter {
    inner: BufWriter<File>,
}

impl ByteWriter {
    pub fn create(path: &Path, magic: &[u8; MAGIC_LEN]) -> Result<Self> {
        let mut inner = BufWriter::with_capacity(1 << 20, File::create(path)?);
        inner.write_all(magic)?;
        Ok(Self { inner })
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn f32s(&mut self, values: &[f32]) -> Result<()> {
        for v in values {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn u32s(&mut self, values: &[u32]) -> Result<()> {
        for v in values {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn u64s(&mut self, values: impl IntoIterator<Item = u64>) -> Result<()> {
        for v in values {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Cursor over a fully-read file. Running past the end reports how many
/// bytes the read needed in total against the file length.
pub(crate) struct ByteReader {
    buf: Vec<u8>,
    pos: usize,
}

impl ByteReader {
    pub fn open(path: &Path, magic: &[u8; MAGIC_LEN]) -> Result<Self> {
        let buf = std::fs::read(path)?;
        let mut reader = Self { buf, pos: 0 };
        let found = reader.take(MAGIC_LEN)?;
        if found != magic {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(reader)
    }

    pub fn len(&self) -> u64 {
        self.buf.len() as u64
    }


    /// Fails with `Truncated` unless at least `bytes` more bytes remain.
    pub fn require(&self, bytes: u64) -> Result<()> {
        let expected = self.pos as u64 + bytes;
        if expected > self.len() {
            return Err(Error::Truncated {
                expected,
                actual: self.len(),
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        self.require(n as u64)?;
        let start = self.pos;
        self.pos += n;
        Ok(&self.buf[start..self.pos])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt("length overflow".into()))?)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt("length overflow".into()))?)?;
        Ok(b.chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn u64s(&mut self, n: usize) -> Result<Vec<u64>> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("length overflow".into()))?)?;
        Ok(b.chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
