//! Little-endian cursor over an in-memory byte slice that tracks offsets for
//! diagnostics, plus a counting writer.

use std::io::Write;

use crate::error::{Error, Result};

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if len > available {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: len,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    /// Fails unless `count` items of `width` bytes are still available.
    pub(crate) fn require(&self, count: usize, width: usize) -> Result<()> {
        let available = self.buf.len() - self.pos;
        match count.checked_mul(width) {
            Some(needed) if needed <= available => Ok(()),
            needed => Err(Error::Truncated {
                offset: self.pos,
                needed: needed.unwrap_or(usize::MAX),
                available,
            }),
        }
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take(4).map_err(|_| Error::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(self.buf).into_owned(),
        })?;
        if found != expected {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, expected: u32) -> Result<()> {
        let offset = self.pos;
        let version = self.u32()?;
        if version != expected {
            return Err(Error::UnsupportedVersion { version, offset });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads `count` f32 values widened to f64, rejecting non-finite entries.
    pub(crate) fn f32_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        self.require(count, 4)?;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let offset = self.pos;
            let v = self.f32()?;
            if !v.is_finite() {
                return Err(Error::Malformed {
                    offset,
                    reason: format!("non-finite value {v}"),
                });
            }
            out.push(f64::from(v));
        }
        Ok(out)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::TrailingBytes {
                offset: self.pos,
                count: self.buf.len() - self.pos,
            });
        }
        Ok(())
    }
}

pub(crate) struct CountingWriter<W> {
    inner: W,
    written: usize,
}

impl<W: Write> CountingWriter<W> {
    pub(crate) fn new(inner: W) -> Self {
        Self { inner, written: 0 }
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        self.written += b.len();
        Ok(())
    }

    pub(crate) fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub(crate) fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn f32(&mut self, v: f64) -> Result<()> {
        self.bytes(&(v as f32).to_le_bytes())
    }

    pub(crate) fn f32_slice(&mut self, values: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(values.len() * 4);
        for &v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.bytes(&buf)
    }

    pub(crate) fn finish(mut self) -> Result<usize> {
        self.inner.flush()?;
        Ok(self.written)
    }
}

pub(crate) fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Invariant(format!("{what} {value} exceeds u32 range")))
}
