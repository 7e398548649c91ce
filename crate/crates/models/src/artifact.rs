//! The `.pmdl` model artifact.
//!
//! Layout (little-endian): magic `PMDL`, `u16` version, kind tag,
//! hyperparameter table, named tensors, optional normalization statistics,
//! then a CRC-32 of every preceding byte. Strings are `u32` length-prefixed
//! UTF-8. Hyperparameters are written in key order, so encoding is
//! deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use pots_core::NormStats;
use pots_tensor::{Tensor, MAX_RANK};

use crate::api::{ModelKind, PotsModel};
use crate::error::{ModelError, Result};

pub const MAGIC: &[u8; 4] = b"PMDL";
pub const FORMAT_VERSION: u16 = 1;

const TAG_F64: u8 = 0;
const TAG_I64: u8 = 1;
const TAG_STR: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum HyperValue {
    Float(f64),
    Int(i64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub kind: String,
    pub hyper: BTreeMap<String, HyperValue>,
    pub tensors: Vec<(String, Tensor)>,
    pub norm: Option<NormStats>,
}

impl ModelArtifact {
    pub fn new(kind: ModelKind) -> Self {
        ModelArtifact {
            kind: kind.tag().to_string(),
            hyper: BTreeMap::new(),
            tensors: Vec::new(),
            norm: None,
        }
    }

    pub fn set_int(&mut self, key: &str, v: i64) -> &mut Self {
        self.hyper.insert(key.into(), HyperValue::Int(v));
        self
    }

    pub fn set_usize(&mut self, key: &str, v: usize) -> &mut Self {
        self.set_int(key, v as i64)
    }

    pub fn set_float(&mut self, key: &str, v: f64) -> &mut Self {
        self.hyper.insert(key.into(), HyperValue::Float(v));
        self
    }

    pub fn set_str(&mut self, key: &str, v: &str) -> &mut Self {
        self.hyper.insert(key.into(), HyperValue::Str(v.into()));
        self
    }

    pub fn push_tensor(&mut self, name: &str, t: Tensor) -> &mut Self {
        self.tensors.push((name.into(), t));
        self
    }

    fn hyper(&self, key: &str) -> Result<&HyperValue> {
        self.hyper.get(key).ok_or_else(|| {
            ModelError::format(format!("{} artifact lacks hyperparameter {key}", self.kind))
        })
    }

    pub fn int(&self, key: &str) -> Result<i64> {
        match self.hyper(key)? {
            HyperValue::Int(v) => Ok(*v),
            other => Err(ModelError::format(format!(
                "hyperparameter {key} is not an integer: {other:?}"
            ))),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        usize::try_from(self.int(key)?)
            .map_err(|_| ModelError::format(format!("hyperparameter {key} is negative")))
    }

    pub fn float(&self, key: &str) -> Result<f64> {
        match self.hyper(key)? {
            HyperValue::Float(v) => Ok(*v),
            other => Err(ModelError::format(format!(
                "hyperparameter {key} is not a real: {other:?}"
            ))),
        }
    }

    pub fn string(&self, key: &str) -> Result<&str> {
        match self.hyper(key)? {
            HyperValue::Str(v) => Ok(v),
            other => Err(ModelError::format(format!(
                "hyperparameter {key} is not a string: {other:?}"
            ))),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| {
                ModelError::format(format!("{} artifact lacks tensor {name}", self.kind))
            })
    }

    /// `tensor(name)` checked against an expected shape.
    pub fn tensor_shaped(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self.tensor(name)?;
        if t.shape() != shape {
            return Err(ModelError::format(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t.clone())
    }

    pub fn norm_stats(&self) -> Result<&NormStats> {
        self.norm.as_ref().ok_or_else(|| {
            ModelError::format(format!(
                "{} artifact lacks normalization statistics",
                self.kind
            ))
        })
    }

    /// Embeds `inner` under `prefix`: its kind becomes the string
    /// hyperparameter `<prefix>kind` and its statistics become tensors.
    pub fn embed(&mut self, prefix: &str, inner: &ModelArtifact) {
        self.set_str(&format!("{prefix}kind"), &inner.kind);
        for (k, v) in &inner.hyper {
            self.hyper.insert(format!("{prefix}{k}"), v.clone());
        }
        for (n, t) in &inner.tensors {
            self.tensors.push((format!("{prefix}{n}"), t.clone()));
        }
        if let Some(norm) = &inner.norm {
            self.push_tensor(
                &format!("{prefix}__norm_mean"),
                Tensor::vector(norm.mean.clone()),
            );
            self.push_tensor(
                &format!("{prefix}__norm_std"),
                Tensor::vector(norm.std.clone()),
            );
        }
    }

    /// Inverse of [`embed`](ModelArtifact::embed).
    pub fn extract(&self, prefix: &str) -> Result<ModelArtifact> {
        let kind = self.string(&format!("{prefix}kind"))?.to_string();
        let kind_key = format!("{prefix}kind");
        let hyper = self
            .hyper
            .iter()
            .filter(|(k, _)| **k != kind_key)
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        let mut tensors = Vec::new();
        let (mut mean, mut std) = (None, None);
        for (n, t) in &self.tensors {
            match n.strip_prefix(prefix) {
                Some("__norm_mean") => mean = Some(t.data().to_vec()),
                Some("__norm_std") => std = Some(t.data().to_vec()),
                Some(rest) => tensors.push((rest.to_string(), t.clone())),
                None => {}
            }
        }
        let norm = match (mean, std) {
            (Some(mean), Some(std)) => Some(NormStats { mean, std }),
            (None, None) => None,
            _ => {
                return Err(ModelError::format(
                    "embedded normalization statistics are incomplete",
                ))
            }
        };
        Ok(ModelArtifact {
            kind,
            hyper,
            tensors,
            norm,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.hyper.len() as u32).to_le_bytes());
        for (k, v) in &self.hyper {
            put_str(&mut out, k);
            match v {
                HyperValue::Float(x) => {
                    out.push(TAG_F64);
                    out.extend_from_slice(&x.to_le_bytes());
                }
                HyperValue::Int(x) => {
                    out.push(TAG_I64);
                    out.extend_from_slice(&x.to_le_bytes());
                }
                HyperValue::Str(s) => {
                    out.push(TAG_STR);
                    put_str(&mut out, s);
                }
            }
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(t.rank() as u8);
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        match &self.norm {
            None => out.push(0),
            Some(n) => {
                out.push(1);
                out.extend_from_slice(&(n.mean.len() as u64).to_le_bytes());
                for x in n.mean.iter().chain(&n.std) {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(ModelError::format("not a model artifact (bad magic)"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(ModelError::format(format!(
                "unsupported artifact version {version}"
            )));
        }
        if bytes.len() < 10 {
            return Err(ModelError::Corruption("artifact is truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(ModelError::Corruption("artifact checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 6 };
        let kind = r.string()?;
        let n_hyper = r.u32()?;
        let mut hyper = BTreeMap::new();
        for _ in 0..n_hyper {
            let key = r.string()?;
            let value = match r.u8()? {
                TAG_F64 => HyperValue::Float(f64::from_le_bytes(r.array()?)),
                TAG_I64 => HyperValue::Int(i64::from_le_bytes(r.array()?)),
                TAG_STR => HyperValue::Str(r.string()?),
                t => {
                    return Err(ModelError::format(format!(
                        "hyperparameter {key} has unknown type tag {t}"
                    )))
                }
            };
            hyper.insert(key, value);
        }
        let n_tensors = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let name = r.string()?;
            let rank = r.u8()? as usize;
            if rank == 0 || rank > MAX_RANK {
                return Err(ModelError::format(format!("tensor {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.len_u64()?);
            }
            let count = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
            let count = count
                .filter(|&c| c.saturating_mul(8) <= r.remaining())
                .ok_or_else(|| ModelError::format(format!("tensor {name} exceeds the artifact")))?;
            let data = (0..count)
                .map(|_| r.array().map(f64::from_le_bytes))
                .collect::<Result<Vec<f64>>>()?;
            let t = Tensor::new(shape, data)
                .map_err(|e| ModelError::format(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        let norm = match r.u8()? {
            0 => None,
            1 => {
                let d = r.len_u64()?;
                if d.saturating_mul(16) > r.remaining() {
                    return Err(ModelError::format(
                        "normalization statistics exceed the artifact",
                    ));
                }
                let mut read = || {
                    (0..d)
                        .map(|_| r.array().map(f64::from_le_bytes))
                        .collect::<Result<Vec<f64>>>()
                };
                let mean = read()?;
                let std = read()?;
                Some(NormStats { mean, std })
            }
            f => return Err(ModelError::format(format!("bad normalization flag {f}"))),
        };
        if r.remaining() != 0 {
            return Err(ModelError::format("trailing bytes after artifact payload"));
        }
        Ok(ModelArtifact {
            kind,
            hyper,
            tensors,
            norm,
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if n > self.remaining() {
            return Err(ModelError::format("artifact payload ends early"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn len_u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.array()?))
            .map_err(|_| ModelError::format("length does not fit in memory"))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ModelError::format("string is not UTF-8"))
    }
}

/// Rebuilds a model from its artifact, dispatching on the kind tag.
pub fn model_from_artifact(a: &ModelArtifact) -> Result<Box<dyn PotsModel>> {
    use crate::{GrudLite, LocfImputer, MeanImputer, SaitsLite, TmfModel, TwoStageKMeans};
    let kind: ModelKind = a.kind.parse()?;
    Ok(match kind {
        ModelKind::Locf => Box::new(LocfImputer::from_artifact(a)?),
        ModelKind::Mean => Box::new(MeanImputer::from_artifact(a)?),
        ModelKind::SaitsLite => Box::new(SaitsLite::from_artifact(a)?),
        ModelKind::GrudLite => Box::new(GrudLite::from_artifact(a)?),
        ModelKind::TwoStageKMeans => Box::new(TwoStageKMeans::from_artifact(a)?),
        ModelKind::Tmf => Box::new(TmfModel::from_artifact(a)?),
    })
}

pub fn save_model(model: &dyn PotsModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let storage = |source| ModelError::Storage {
        path: path.to_path_buf(),
        source,
    };
    let bytes = model.to_artifact().encode();
    let mut f = fs::File::create(path).map_err(storage)?;
    f.write_all(&bytes).map_err(storage)?;
    f.sync_all().map_err(storage)
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Storage {
        path: path.to_path_buf(),
        source,
    })?;
    ModelArtifact::decode(&bytes).map_err(|e| match e {
        ModelError::Format(m) => ModelError::Format(format!("{}: {m}", path.display())),
        ModelError::Corruption(m) => ModelError::Corruption(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Box<dyn PotsModel>> {
    model_from_artifact(&load_artifact(path)?)
}
