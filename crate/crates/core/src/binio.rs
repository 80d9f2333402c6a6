//! Little-endian primitives shared by the graph file and the checkpoint.

use crate::graph_builder::fnv1a64;
use crate::{Error, Result};

pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8], version: u32) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }

    /// Appends the checksum trailer and returns the bytes.
    pub fn finish(mut self) -> Vec<u8> {
        let sum = fnv1a64(&self.buf);
        self.u64(sum);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    /// Verifies magic, version and checksum trailer.
    pub fn open(bytes: &'a [u8], magic: &[u8], version: u32, what: &'static str) -> Result<Self> {
        if bytes.len() < magic.len() + 4 + 8 {
            return Err(corrupt(what, "truncated header"));
        }
        if &bytes[..magic.len()] != magic {
            return Err(corrupt(what, "bad magic"));
        }
        let found = u32::from_le_bytes(bytes[magic.len()..magic.len() + 4].try_into().unwrap());
        if found != version {
            return Err(Error::Version {
                what,
                found,
                expected: version,
            });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(trailer.try_into().unwrap());
        if fnv1a64(body) != stored {
            return Err(corrupt(what, "checksum mismatch (truncated or modified)"));
        }
        Ok(Self {
            buf: body,
            pos: magic.len() + 4,
            what,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt(self.what, "unexpected end of data"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn len(&mut self, max: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > max {
            return Err(corrupt(self.what, "length exceeds remaining data"));
        }
        Ok(n)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| corrupt(self.what, "invalid utf-8"))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(self.remaining() / 8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(corrupt(self.what, "trailing bytes"));
        }
        Ok(())
    }
}

pub(crate) fn corrupt(what: &'static str, message: &str) -> Error {
    Error::Corrupt {
        what,
        message: message.to_owned(),
    }
}
