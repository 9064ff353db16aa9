//! Single-file binary checkpoints.
//!
//! Layout (little-endian): magic `RDCKPT\0\0`, format version `u32`, header
//! entry count `u32` followed by length-prefixed UTF-8 key/value pairs,
//! record count `u32` followed by records (name, `ndim: u32`, `ndim` x
//! `u64` dims, row-major `f64` values), and a SHA-256 of everything before
//! the trailer.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::Parameterized;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RDCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Header key naming the model kind (`teacher` or `student`).
pub const KIND_KEY: &str = "model_kind";
const CONFIG_PREFIX: &str = "config.";

/// Byte sink for the framed formats.
#[derive(Default)]
pub(crate) struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub(crate) fn new(magic: &[u8], version: u32) -> Self {
        let mut e = Encoder { buf: magic.to_vec() };
        e.u32(version);
        e
    }

    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub(crate) fn f64s(&mut self, v: &[f64]) {
        self.buf.reserve(v.len() * 8);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    /// Appends the checksum trailer and returns the bytes.
    pub(crate) fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

/// Cursor over a checksummed frame.
pub(crate) struct Decoder<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Verifies magic and checksum; returns the decoder and the version.
    pub(crate) fn open(bytes: &'a [u8], magic: &[u8]) -> Result<(Self, u32)> {
        if bytes.len() < magic.len() + 4 + 32 {
            return Err(Error::Corrupt("file too short".into()));
        }
        if &bytes[..magic.len()] != magic {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let mut d = Decoder { body, pos: magic.len() };
        let version = d.u32()?;
        Ok((d, version))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.body.len());
        match end {
            Some(end) => {
                let s = &self.body[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corrupt("unexpected end of data".into())),
        }
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("invalid UTF-8".into()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.body.len() {
            return Err(Error::Corrupt("trailing bytes".into()));
        }
        Ok(())
    }
}

/// Decoded checkpoint: string header plus named tensors in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: BTreeMap<String, String>,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Captures every parameter of `model` together with its configuration.
    pub fn capture<M: Parameterized + ?Sized>(kind: &str, config: &ModelConfig, model: &M) -> Self {
        let mut header = BTreeMap::new();
        header.insert(KIND_KEY.to_string(), kind.to_string());
        for (k, v) in config.to_kv() {
            header.insert(format!("{CONFIG_PREFIX}{k}"), v);
        }
        let mut params = Vec::new();
        model.visit(&mut |name, t| params.push((name.to_string(), t.clone())));
        Checkpoint { header, params }
    }

    pub fn kind(&self) -> Option<&str> {
        self.header.get(KIND_KEY).map(String::as_str)
    }

    pub fn config(&self) -> Result<ModelConfig> {
        let pairs: Vec<(&str, &str)> = self
            .header
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(CONFIG_PREFIX).map(|k| (k, v.as_str())))
            .collect();
        ModelConfig::from_kv(pairs).map_err(|e| Error::Corrupt(format!("checkpoint config: {e}")))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        e.u32(self.header.len() as u32);
        for (k, v) in &self.header {
            e.str(k);
            e.str(v);
        }
        e.u32(self.params.len() as u32);
        for (name, t) in &self.params {
            e.str(name);
            e.u32(t.ndim() as u32);
            for &s in t.shape() {
                e.u64(s as u64);
            }
            e.f64s(t.data());
        }
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut d, version) = Decoder::open(bytes, CHECKPOINT_MAGIC)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Corrupt(format!("unsupported checkpoint version {version}")));
        }
        let mut header = BTreeMap::new();
        for _ in 0..d.u32()? {
            let k = d.str()?;
            let v = d.str()?;
            header.insert(k, v);
        }
        let n = d.u32()?;
        let mut params = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = d.str()?;
            let ndim = d.u32()? as usize;
            let shape = (0..ndim).map(|_| d.u64().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &s| a.checked_mul(s));
            let numel = numel.ok_or_else(|| Error::Corrupt("shape overflow".into()))?;
            let data = d.f64s(numel)?;
            let t = Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("record {name}: {e}")))?;
            params.push((name, t));
        }
        d.finish()?;
        Ok(Checkpoint { header, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Copies every parameter of `model` selected by `filter` from this
    /// checkpoint. Missing names or shape mismatches are errors.
    pub fn load_into<M: Parameterized + ?Sized>(&self, model: &mut M, filter: &dyn Fn(&str) -> bool) -> Result<()> {
        let by_name: BTreeMap<&str, &Tensor> = self.params.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut err = None;
        model.visit_mut(&mut |name, t| {
            if err.is_some() || !filter(name) {
                return;
            }
            match by_name.get(name) {
                Some(src) if src.shape() == t.shape() => t.data_mut().copy_from_slice(src.data()),
                Some(src) => {
                    err = Some(Error::Corrupt(format!(
                        "parameter {name}: stored shape {:?}, model expects {:?}",
                        src.shape(),
                        t.shape()
                    )))
                }
                None => err = Some(Error::Corrupt(format!("parameter {name} missing from checkpoint"))),
            }
        });
        err.map_or(Ok(()), Err)
    }
}
