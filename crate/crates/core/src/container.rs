//! Little-endian binary container shared by checkpoints (`QTCK`) and
//! dataset files (`QTDS`): a 4-byte magic, a `u32` version, a `u32` record
//! count, then format-specific records.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn with_header(magic: &[u8; 4], count: u32) -> Self {
        let mut w = Self::default();
        w.buf.extend_from_slice(magic);
        w.u32(VERSION);
        w.u32(count);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("value fits in u32"));
    }

    pub fn f32_slice(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.f32(*x);
        }
    }

    /// Rank, extents, then the `f32` payload.
    pub fn tensor(&mut self, t: &Tensor<f32>) {
        self.usize(t.shape().len());
        for &d in t.shape() {
            self.usize(d);
        }
        self.f32_slice(t.data());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    /// Checks magic and version; returns the reader and the header count.
    pub fn open(buf: &'a [u8], magic: &[u8; 4], what: &'static str) -> Result<(Self, u32)> {
        let mut r = Self { buf, pos: 0, what };
        let got = r.take(4)?;
        if got != magic {
            return Err(r.err_at(0, format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err_at(4, format!("unsupported version {version}, expected {VERSION}")));
        }
        let count = r.u32()?;
        Ok((r, count))
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn err_at(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            offset,
            reason: reason.into(),
        }
    }

    pub fn err(&self, reason: impl Into<String>) -> Error {
        self.err_at(self.pos, reason)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated: need {n} bytes, {} remain",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.err("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn tensor(&mut self) -> Result<Tensor<f32>> {
        let at = self.pos;
        let rank = self.usize()?;
        if rank > 8 {
            return Err(self.err_at(at, format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| self.err_at(at, "tensor size overflow"))?;
        let data = self.f32_vec(n)?;
        Tensor::new(&shape, data).map_err(|e| self.err_at(at, e.to_string()))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Short hex SHA-256 digest of `parts`, used to name artifacts by content.
pub fn digest_hex(parts: &[&[u8]]) -> String {
    use sha2::{Digest, Sha256};
    use std::fmt::Write as _;
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let mut out = String::with_capacity(16);
    for b in &h.finalize()[..8] {
        write!(out, "{b:02x}").expect("write to string");
    }
    out
}
