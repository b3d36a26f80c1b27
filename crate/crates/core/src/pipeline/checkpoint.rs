//! Versioned binary checkpoint container.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "SSODCKPT"
//! 8       4     format version, u32 little-endian
//! 12      8     metadata length M, u64 little-endian
//! 20      M     metadata, UTF-8 JSON
//! 20+M    4     tensor count N, u32 little-endian
//! then N times:
//!         4     name length L, u32 little-endian
//!         L     name, UTF-8
//!         8     element count K, u64 little-endian
//!         8K    elements, f64 little-endian
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::detector::ParamVector;

pub const MAGIC: &[u8; 8] = b"SSODCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic header)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checkpoint is truncated or corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint has no tensor named `{0}`")]
    MissingTensor(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    /// JSON document describing the tensors.
    pub meta: String,
    pub tensors: Vec<(String, ParamVector<f64>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&ParamVector<f64>, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.meta.len() as u64).to_le_bytes());
        b.extend_from_slice(self.meta.as_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(t.len() as u64).to_le_bytes());
            b.extend_from_slice(&t.to_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let m = r.u64()? as usize;
        let meta = String::from_utf8(r.take(m)?.to_vec()).map_err(|_| CheckpointError::Corrupt("metadata is not UTF-8".into()))?;
        let n = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let l = r.u32()? as usize;
            let name = String::from_utf8(r.take(l)?.to_vec())
                .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;
            let k = r.u64()? as usize;
            let len = k.checked_mul(8).ok_or_else(|| CheckpointError::Corrupt("tensor too large".into()))?;
            let t = ParamVector::from_bytes(r.take(len)?).expect("length is a multiple of 8");
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        // write-then-rename so an interrupted write never clobbers the previous checkpoint
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("needed {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            meta: r#"{"epoch":3}"#.into(),
            tensors: vec![
                ("student".into(), ParamVector::new(vec![1.0, -0.5, f64::MIN_POSITIVE])),
                ("teacher".into(), ParamVector::new(vec![])),
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.tensor("student").unwrap().values[2].to_bits(), f64::MIN_POSITIVE.to_bits());
        assert!(matches!(back.tensor("best"), Err(CheckpointError::MissingTensor(_))));
    }

    #[test]
    fn header_checks() {
        let mut b = sample().to_bytes();
        b[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&b),
            Err(CheckpointError::Version { found: 2, supported: 1 })
        ));
        b[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&b), Err(CheckpointError::BadMagic)));
        let b = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&b[..b.len() - 3]), Err(CheckpointError::Corrupt(_))));
    }
}
