//! Little-endian binary envelope shared by the corpus container and training
//! checkpoints:
//!
//! ```text
//! magic[8] | version u32 | payload_len u64 | payload | crc32(payload) u32
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub(crate) fn write_envelope<W: Write>(w: &mut W, magic: &[u8; 8], version: u32, payload: &[u8]) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(payload)?;
    w.write_all(&crc32fast::hash(payload).to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_envelope<R: Read>(r: &mut R, magic: &[u8; 8], version: u32) -> Result<Vec<u8>> {
    let mut head = [0u8; 20];
    r.read_exact(&mut head).map_err(|_| corrupt("truncated header"))?;
    if &head[..8] != magic {
        return Err(corrupt("bad magic"));
    }
    let found = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if found != version {
        return Err(Error::Version { found, expected: version });
    }
    let len = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    r.take(len as u64).read_to_end(&mut payload)?;
    if payload.len() != len {
        return Err(corrupt(format!("truncated payload ({} of {len} bytes)", payload.len())));
    }
    let mut crc = [0u8; 4];
    r.read_exact(&mut crc).map_err(|_| corrupt("missing checksum"))?;
    if u32::from_le_bytes(crc) != crc32fast::hash(&payload) {
        return Err(corrupt("checksum mismatch"));
    }
    Ok(payload)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

#[derive(Default)]
pub(crate) struct Encoder {
    pub buf: Vec<u8>,
}

impl Encoder {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
    }
    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }
    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
    pub fn u64s(&mut self, v: &[u64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.u64(x);
        }
    }
    pub fn array1(&mut self, a: &Array1<f64>) {
        self.f64s(a.as_slice().expect("contiguous"));
    }
    /// Dimensions followed by row-major data.
    pub fn array2(&mut self, a: &Array2<f64>) {
        self.u64(a.nrows() as u64);
        self.u64(a.ncols() as u64);
        for &x in a.iter() {
            self.f64(x);
        }
    }
}

pub(crate) struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(corrupt("unexpected end of payload"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(corrupt(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(corrupt("length prefix exceeds payload"));
        }
        Ok(n)
    }
    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }
    pub fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| corrupt("invalid utf-8"))
    }
    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    pub fn u64s(&mut self) -> Result<Vec<u64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.u64()).collect()
    }
    pub fn array1(&mut self) -> Result<Array1<f64>> {
        Ok(Array1::from(self.f64s()?))
    }
    pub fn array2(&mut self) -> Result<Array2<f64>> {
        let r = self.u64()? as usize;
        let c = self.u64()? as usize;
        if r.saturating_mul(c).saturating_mul(8) > self.buf.len() - self.pos {
            return Err(corrupt("matrix dimensions exceed payload"));
        }
        let data = (0..r * c).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Array2::from_shape_vec((r, c), data).map_err(|e| corrupt(e.to_string()))
    }
}
