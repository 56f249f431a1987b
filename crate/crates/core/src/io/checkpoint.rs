//! Layout: magic `BYLA`, u32 LE version, u64 LE header length, JSON header,
//! then raw little-endian f32 tensor data. Header offsets are in bytes from
//! the start of the data section.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dsp::NormStats;
use crate::error::{Error, Result};
use crate::nn::{Module, Tensor};

pub const MAGIC: [u8; 4] = *b"BYLA";
pub const VERSION: u32 = 1;
const PREFIX_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub method: String,
    pub fingerprint: String,
    pub stats: Option<NormStats>,
    pub config: Value,
    #[serde(default)]
    pub meta: Map<String, Value>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub method: String,
    pub fingerprint: String,
    pub stats: Option<NormStats>,
    pub config: Value,
    pub meta: Map<String, Value>,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(method: &str) -> Self {
        Self {
            method: method.to_string(),
            fingerprint: String::new(),
            stats: None,
            config: Value::Null,
            meta: Map::new(),
            tensors: Vec::new(),
        }
    }

    /// Replaces an existing tensor of the same name.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        match self.tensors.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = t,
            None => self.tensors.push((name, t)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Names starting with `prefix`, in insertion order.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.tensors
            .iter()
            .map(|(n, _)| n.as_str())
            .filter(move |n| n.starts_with(prefix))
    }

    /// Total f32 element count of tensors whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Stores parameters and buffers under `prefix`.
    pub fn put_module<M: Module + ?Sized>(&mut self, prefix: &str, m: &M) {
        let mut ps = Vec::new();
        m.visit_params(prefix, &mut ps);
        for (n, p) in ps {
            self.insert(n, p.value.clone());
        }
        let mut bs = Vec::new();
        m.visit_buffers(prefix, &mut bs);
        for (n, b) in bs {
            self.insert(n, b.clone());
        }
    }

    /// Overwrites parameters and buffers of `m` from tensors under `prefix`.
    pub fn load_module<M: Module + ?Sized>(&self, prefix: &str, m: &mut M) -> Result<()> {
        let mut ps = Vec::new();
        m.visit_params_mut(prefix, &mut ps);
        for (n, p) in ps {
            copy_checked(&n, self.require(&n)?, &mut p.value)?;
        }
        let mut bs = Vec::new();
        m.visit_buffers_mut(prefix, &mut bs);
        for (n, b) in bs {
            copy_checked(&n, self.require(&n)?, b)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 4 * t.numel() as u64;
        }
        let header = Header {
            method: self.method.clone(),
            fingerprint: self.fingerprint.clone(),
            stats: self.stats,
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + offset as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            return Err(Error::BadMagic(m));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < PREFIX_LEN {
            return Err(Error::BoundsViolation(format!(
                "file of {} bytes is shorter than the {PREFIX_LEN}-byte prefix",
                bytes.len()
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let body = &bytes[PREFIX_LEN..];
        if header_len > body.len() as u64 {
            return Err(Error::BoundsViolation(format!(
                "header length {header_len} exceeds remaining {} bytes",
                body.len()
            )));
        }
        let (json, data) = body.split_at(header_len as usize);
        let header: Header = serde_json::from_slice(json)
            .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let numel = e
                .shape
                .iter()
                .try_fold(1usize, |a, &s| a.checked_mul(s))
                .ok_or_else(|| Error::BoundsViolation(format!("`{}`: shape overflows", e.name)))?;
            let end = (numel as u64)
                .checked_mul(4)
                .and_then(|n| n.checked_add(e.offset))
                .filter(|&end| end <= data.len() as u64)
                .ok_or_else(|| {
                    Error::BoundsViolation(format!(
                        "`{}` at offset {} with {numel} values exceeds {} data bytes",
                        e.name,
                        e.offset,
                        data.len()
                    ))
                })?;
            if tensors.iter().any(|(n, _): &(String, Tensor)| *n == e.name) {
                return Err(Error::Checkpoint(format!("duplicate tensor `{}`", e.name)));
            }
            let values: Vec<f32> = data[e.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((e.name.clone(), Tensor::from_vec(&e.shape, values)));
        }
        Ok(Self {
            method: header.method,
            fingerprint: header.fingerprint,
            stats: header.stats,
            config: header.config,
            meta: header.meta,
            tensors,
        })
    }

    /// Writes via a temporary sibling and a rename, so an interrupted save
    /// never leaves a truncated file at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Strict mode fails on mismatch; lenient mode logs a warning.
    pub fn check_fingerprint(&self, expected: &str, strict: bool) -> Result<()> {
        if self.fingerprint == expected {
            return Ok(());
        }
        if strict {
            return Err(Error::FingerprintMismatch {
                stored: self.fingerprint.clone(),
                expected: expected.to_string(),
            });
        }
        log::warn!(
            "checkpoint fingerprint {} differs from config {}",
            self.fingerprint,
            expected
        );
        Ok(())
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Checkpoint(format!("missing meta field `{key}`")))
    }
}

fn copy_checked(name: &str, src: &Tensor, dst: &mut Tensor) -> Result<()> {
    if src.shape() != dst.shape() {
        return Err(Error::Checkpoint(format!(
            "`{name}`: stored shape {:?}, model expects {:?}",
            src.shape(),
            dst.shape()
        )));
    }
    dst.data_mut().copy_from_slice(src.data());
    Ok(())
}

/// Feature matrix `[N, d]` plus labels, in the checkpoint container.
pub fn write_features(
    path: &Path,
    features: &Tensor,
    labels: &[usize],
    label_names: &[String],
    fingerprint: &str,
) -> Result<()> {
    if features.shape().len() != 2 || features.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![labels.len(), 0],
            actual: features.shape().to_vec(),
        });
    }
    let mut c = Checkpoint::new("features");
    c.fingerprint = fingerprint.to_string();
    c.meta.insert("label_names".into(), serde_json::json!(label_names));
    c.insert("features", features.clone());
    c.insert(
        "labels",
        Tensor::from_vec(&[labels.len()], labels.iter().map(|&l| l as f32).collect()),
    );
    c.save(path)
}

/// Returns `(features, labels, label_names)`.
pub fn read_features(path: &Path) -> Result<(Tensor, Vec<usize>, Vec<String>)> {
    let c = Checkpoint::load(path)?;
    if c.method != "features" {
        return Err(Error::Checkpoint(format!("`{}` holds `{}`, not features", path.display(), c.method)));
    }
    let names: Vec<String> = c
        .meta
        .get("label_names")
        .cloned()
        .map(serde_json::from_value)
        .transpose()?
        .unwrap_or_default();
    let feats = c.require("features")?.clone();
    let labels: Vec<usize> = c.require("labels")?.data().iter().map(|&l| l as usize).collect();
    if feats.shape().len() != 2 || feats.shape()[0] != labels.len() {
        return Err(Error::Checkpoint("feature and label counts differ".into()));
    }
    if labels.iter().any(|&l| l >= names.len().max(1)) && !names.is_empty() {
        return Err(Error::Checkpoint("label index outside label_names".into()));
    }
    Ok((feats, labels, names))
}
