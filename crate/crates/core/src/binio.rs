//! Little-endian binary encoding shared by checkpoints and trajectory
//! stores. Files end with a SHA-256 digest of every preceding byte.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut w = Self { buf: magic.to_vec() };
        w.u32(version);
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

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length fits in u32"));
    }

    pub fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Raw values without a length prefix.
    pub fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }

    /// Length-prefixed vector.
    pub fn vec(&mut self, vs: &[f64]) {
        self.len(vs.len());
        self.f64s(vs);
    }

    pub fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: String,
}

impl<'a> Reader<'a> {
    /// Verifies magic, version and trailing digest.
    pub fn open(bytes: &'a [u8], magic: &[u8; 8], version: u32, what: &str) -> Result<Self> {
        let corrupt = || Error::Corrupt(what.to_string());
        if bytes.len() < 8 + 4 + 32 || &bytes[..8] != magic {
            return Err(corrupt());
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt());
        }
        let mut r = Reader {
            buf: body,
            pos: 8,
            what: what.to_string(),
        };
        let found = r.u32()?;
        if found != version {
            return Err(Error::Version {
                what: what.to_string(),
                found,
                expected: version,
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corrupt(self.what.clone()));
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

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt(self.what.clone()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        self.f64s(n)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Corrupt(self.what))
        }
    }
}

/// Writes through a sibling temporary file and renames it into place, so
/// readers never see a partial file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_tamper() {
        let mut w = Writer::new(b"TESTFILE", 2);
        w.str("héllo");
        w.vec(&[1.5, -0.0, f64::MIN_POSITIVE]);
        w.u64(u64::MAX);
        let bytes = w.finish();
        let mut r = Reader::open(&bytes, b"TESTFILE", 2, "t").unwrap();
        assert_eq!(r.str().unwrap(), "héllo");
        let v = r.vec().unwrap();
        assert_eq!(v[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(r.u64().unwrap(), u64::MAX);
        r.finish().unwrap();

        assert!(matches!(Reader::open(&bytes, b"TESTFILE", 3, "t"), Err(Error::Version { .. })));
        let mut bad = bytes.clone();
        bad[14] ^= 1;
        assert!(matches!(Reader::open(&bad, b"TESTFILE", 2, "t"), Err(Error::Corrupt(_))));
        assert!(Reader::open(&bytes[..10], b"TESTFILE", 2, "t").is_err());
    }
}
