//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "GLANNCKP"
//! version   u32      currently 1
//! epoch     u64
//! config    u64 length + UTF-8 bytes (TOML snapshot)
//! meta      u32 count, then (u32 len + key, u32 len + value) pairs
//! tensors   u32 count, then per tensor:
//!             u32 len + name, u8 dtype (1 = f64, 2 = f32),
//!             u32 rank, rank × u64 dims, payload
//! checksum  32 bytes SHA-256 of everything above
//! ```
//!
//! The version is checked before the checksum so that a file written by a
//! newer format reports a version error rather than a checksum error.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 8] = b"GLANNCKP";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const DTYPE_F32: u8 = 2;
const HEADER: usize = 12;
const TRAILER: usize = 32;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub config: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(epoch: u64) -> Self {
        Self { epoch, ..Self::default() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        self.tensors.remove(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn meta_value(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("checkpoint has no `{key}` entry")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER + TRAILER || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic or truncated)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Version { found: version, supported: VERSION });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - TRAILER);
        let computed = Sha256::digest(body);
        if computed.as_slice() != trailer {
            return Err(Error::Checksum { stored: hex(trailer), computed: hex(&computed) });
        }
        let mut r = Reader { buf: body, pos: HEADER };
        let epoch = r.u64()?;
        let config_len = r.len_u64()?;
        let config = r.string(config_len)?;
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.short_string()?;
            let v = r.short_string()?;
            meta.insert(k, v);
        }
        let mut tensors = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.short_string()?;
            let dtype = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.len_u64()).collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
            let data: Vec<f64> = match dtype {
                DTYPE_F64 => r
                    .take(count.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                DTYPE_F32 => r
                    .take(count.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                other => return Err(Error::Format(format!("tensor `{name}` has unknown dtype {other}"))),
            };
            let t = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| Error::Format(e.to_string()))?;
            tensors.insert(name, t);
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!("{} trailing bytes before checksum", body.len() - r.pos)));
        }
        Ok(Self { epoch, config, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        // Write to a sibling and rename so a crash never leaves half a file.
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len_u64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in checkpoint".into()))
    }

    fn short_string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        self.string(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new(7);
        ck.config = "[glo]\nepochs = 3\n".into();
        ck.meta.insert("stage".into(), "glo".into());
        ck.insert("latents", standard_normal(5, 3, 1).into_dyn());
        ck.insert("scalar", ArrayD::from_elem(IxDyn(&[]), f64::NEG_INFINITY));
        ck.insert("empty", ArrayD::zeros(IxDyn(&[0, 4])));
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.epoch, 7);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.meta, ck.meta);
        for (name, t) in &ck.tensors {
            let u = &back.tensors[name];
            assert_eq!(t.shape(), u.shape());
            assert!(t.iter().zip(u.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/x.ckpt");
        sample().save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), sample());
        assert!(!path.with_extension("partial").exists());
    }

    #[test]
    fn every_corrupt_byte_is_detected() {
        let bytes = sample().to_bytes();
        for i in HEADER..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x40;
            assert!(matches!(Checkpoint::from_bytes(&b), Err(Error::Checksum { .. })), "byte {i}");
        }
    }

    #[test]
    fn newer_version_is_rejected_by_name() {
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Version { found: 2, supported: 1 }));
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('1'), "{msg}");
    }

    #[test]
    fn bad_magic_and_missing_tensor() {
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::Format(_))));
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(matches!(sample().tensor("generator.0.weight"), Err(Error::MissingTensor(_))));
    }

    #[test]
    fn reads_f32_payloads() {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u64.to_le_bytes());
        out.extend_from_slice(&0u64.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&1u32.to_le_bytes());
        put_str(&mut out, "w");
        out.push(DTYPE_F32);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&2u64.to_le_bytes());
        out.extend_from_slice(&1.5f32.to_le_bytes());
        out.extend_from_slice(&(-2.0f32).to_le_bytes());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        let ck = Checkpoint::from_bytes(&out).unwrap();
        assert_eq!(ck.tensor("w").unwrap().as_slice().unwrap(), &[1.5, -2.0]);
    }
}
