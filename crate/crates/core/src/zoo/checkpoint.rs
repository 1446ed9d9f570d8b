//! Binary checkpoint format.
//!
//! ```text
//! magic      4 bytes  "GPUN"
//! version    u32 LE   (1)
//! dtype      u32 LE   (1 = f32, 2 = f64)
//! count      u32 LE   number of named tensors
//! per tensor:
//!   name_len u32 LE, name (UTF-8)
//!   rank     u32 LE, dims (u32 LE each)
//!   data     product(dims) scalars, little-endian
//! ```
//!
//! Tensors appear in a fixed order: `meta.*` records describing the model
//! configuration, then every parameter, then every BN running statistic.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::blocks::BlockKind;
use crate::engine::param::logical_dims;
use crate::engine::Layer;
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{DType, Scalar, Tensor4};

use super::graph::{LayerGraph, ModelConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GPUN";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Record {
    dims: Vec<usize>,
    data: Vec<u8>,
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[T]) {
    push_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    push_u32(out, dims.len() as u32);
    for &d in dims {
        push_u32(out, d as u32);
    }
    for &v in data {
        v.write_le(out);
    }
}

fn meta<T: Scalar>(cfg: &ModelConfig) -> Vec<(&'static str, Vec<T>)> {
    let f = |v: usize| T::lit(v as f64);
    vec![
        ("meta.block_kind", vec![T::lit(cfg.block_kind.tag() as f64)]),
        ("meta.in_channels", vec![f(cfg.in_channels)]),
        ("meta.out_channels", vec![f(cfg.out_channels)]),
        ("meta.widths", cfg.widths.iter().map(|&w| f(w)).collect()),
    ]
}

/// Serialize a model to bytes.
pub fn write_checkpoint<T: Scalar>(model: &LayerGraph<T>) -> Vec<u8> {
    let mut entries: Vec<(String, Vec<usize>, Vec<T>)> = meta::<T>(model.config())
        .into_iter()
        .map(|(name, v)| (name.to_string(), vec![v.len()], v))
        .collect();
    model.visit_params("", &mut |name, p| {
        entries.push((name.to_string(), p.dims(), p.value.data().to_vec()));
    });
    model.visit_buffers("", &mut |name, t| {
        entries.push((name.to_string(), logical_dims(t, 1), t.data().to_vec()));
    });

    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    push_u32(&mut out, CHECKPOINT_VERSION);
    push_u32(&mut out, T::DTYPE.tag());
    push_u32(&mut out, entries.len() as u32);
    for (name, dims, data) in &entries {
        push_tensor(&mut out, name, dims, data);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn parse(bytes: &[u8]) -> Result<(DType, Vec<(String, Record)>), CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let tag = r.u32("dtype")?;
    let dtype = DType::from_tag(tag).ok_or(CheckpointError::UnknownDtype(tag))?;
    let count = r.u32("tensor count")?;
    let mut records = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let elems = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(CheckpointError::Truncated("tensor data"))?;
        let nbytes = elems
            .checked_mul(dtype.size())
            .ok_or(CheckpointError::Truncated("tensor data"))?;
        let data = r.take(nbytes, "tensor data")?.to_vec();
        records.push((name, Record { dims, data }));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok((dtype, records))
}

fn decode<T: Scalar>(rec: &Record) -> Vec<T> {
    rec.data
        .chunks_exact(T::DTYPE.size())
        .map(T::read_le)
        .collect()
}

fn meta_usize<T: Scalar>(
    map: &HashMap<String, Record>,
    name: &str,
) -> Result<Vec<usize>, CheckpointError> {
    let rec = map
        .get(name)
        .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
    decode::<T>(rec)
        .into_iter()
        .map(|v| {
            let f = v.as_f64();
            if f >= 0.0 && f.fract() == 0.0 && f < u32::MAX as f64 {
                Ok(f as usize)
            } else {
                Err(CheckpointError::Meta(format!(
                    "{name} holds non-integer {f}"
                )))
            }
        })
        .collect()
}

/// Rebuild a model from checkpoint bytes.
pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<LayerGraph<T>> {
    let (dtype, records) = parse(bytes)?;
    if dtype != T::DTYPE {
        return Err(CheckpointError::DtypeMismatch {
            expected: T::DTYPE.name(),
            found: dtype.name(),
        }
        .into());
    }
    let mut map: HashMap<String, Record> = HashMap::with_capacity(records.len());
    for (name, rec) in records {
        map.insert(name, rec);
    }
    let kind_tag = meta_usize::<T>(&map, "meta.block_kind")?;
    let block_kind = kind_tag
        .first()
        .and_then(|&t| BlockKind::from_tag(t as u32))
        .ok_or_else(|| CheckpointError::Meta(format!("unknown block kind {kind_tag:?}")))?;
    let single = |name: &str| -> Result<usize, CheckpointError> {
        match meta_usize::<T>(&map, name)?.as_slice() {
            [v] => Ok(*v),
            other => Err(CheckpointError::Meta(format!(
                "{name} should hold one value, found {other:?}"
            ))),
        }
    };
    let cfg = ModelConfig {
        block_kind,
        widths: meta_usize::<T>(&map, "meta.widths")?,
        in_channels: single("meta.in_channels")?,
        out_channels: single("meta.out_channels")?,
    };
    let mut model =
        LayerGraph::<T>::uninit(&cfg).map_err(|e| CheckpointError::Meta(e.to_string()))?;

    let mut consumed = 4usize;
    let mut fail: Option<CheckpointError> = None;
    let mut fill = |name: &str, target: &mut Tensor4<T>, dims: Vec<usize>| {
        if fail.is_some() {
            return;
        }
        match map.get(name) {
            None => fail = Some(CheckpointError::MissingTensor(name.to_string())),
            Some(rec) if rec.dims != dims => {
                fail = Some(CheckpointError::TensorShape {
                    name: name.to_string(),
                    expected: dims,
                    found: rec.dims.clone(),
                })
            }
            Some(rec) => {
                target.data_mut().copy_from_slice(&decode::<T>(rec));
                consumed += 1;
            }
        }
    };
    model.visit_params_mut("", &mut |name, p| {
        let dims = p.dims();
        fill(name, &mut p.value, dims)
    });
    model.visit_buffers_mut("", &mut |name, t| {
        let dims = logical_dims(t, 1);
        fill(name, t, dims)
    });
    if let Some(e) = fail {
        return Err(e.into());
    }
    if consumed != map.len() {
        let mut known = std::collections::HashSet::new();
        model.visit_params("", &mut |n, _| {
            known.insert(n.to_string());
        });
        model.visit_buffers("", &mut |n, _| {
            known.insert(n.to_string());
        });
        let mut extra: Vec<_> = map
            .keys()
            .filter(|k| !k.starts_with("meta.") && !known.contains(*k))
            .cloned()
            .collect();
        extra.sort();
        let name = extra.into_iter().next().unwrap_or_else(|| "meta".into());
        return Err(CheckpointError::UnexpectedTensor(name).into());
    }
    Ok(model)
}

/// Write atomically: serialize to a sibling temp file, then rename over `path`.
pub fn save_checkpoint<T: Scalar>(model: &LayerGraph<T>, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(model);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<LayerGraph<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
