//! Binary checkpoint format.
//!
//! ```text
//! magic     8 bytes  "FRFMCKPT"
//! version   u32 LE
//! hlen      u32 LE, then hlen bytes of JSON {model, head, meta}
//! count     u32 LE
//! manifest  count × (u16 name_len, name, u8 ndim, ndim × u32 dim, u64 byte offset)
//! data      f32 LE values of every tensor, back to back
//! crc       u32 LE CRC-32 of every preceding byte
//! ```
//!
//! Tied embedding tables appear once; decoding reads the same entry.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::VocabSpec;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::{ParamGroup, ParamStore, Scalar, Tensor};
use crate::sft::AnomalyHeadConfig;

pub const MAGIC: &[u8; 8] = b"FRFMCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Training stage that produced the file, e.g. "pretrain".
    pub stage: String,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    head: Option<AnomalyHeadConfig>,
    meta: CheckpointMeta,
}

pub fn to_bytes<S: Scalar>(model: &Model<S>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        model: model.config.clone(),
        head: model.head.clone(),
        meta: meta.clone(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (_, p) in model.params.iter() {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * p.value.len() as u64;
    }
    for (_, p) in model.params.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<(Model<S>, CheckpointMeta)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::Format("file too short".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Crc { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 12 };
    let hlen = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Format(format!("header: {e}")))?;
    header.model.validate()?;
    if let Some(h) = &header.head {
        h.validate()?;
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64()?;
        entries.push((name, shape, offset));
    }
    let data_start = r.pos;
    let mut model = Model::<S> {
        config: header.model,
        head: header.head,
        params: ParamStore::new(),
    };
    let expected = model.expected_shapes();
    if expected.len() != entries.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensors, configuration expects {}",
            entries.len(),
            expected.len()
        )));
    }
    let mut next = 0u64;
    for ((name, shape, offset), (ename, eshape)) in entries.into_iter().zip(expected) {
        if name != ename {
            return Err(Error::Format(format!(
                "expected tensor {ename}, found {name}"
            )));
        }
        if shape != eshape {
            return Err(Error::ShapeMismatch {
                name,
                stored: shape,
                expected: eshape,
            });
        }
        if offset != next {
            return Err(Error::Format(format!(
                "tensor {name} at offset {offset}, expected {next}"
            )));
        }
        let n: usize = shape.iter().product();
        let start = data_start + offset as usize;
        let raw = body
            .get(start..start + 4 * n)
            .ok_or_else(|| Error::Format(format!("tensor {name} runs past the data section")))?;
        let vals: Vec<S> = raw
            .chunks_exact(4)
            .map(|c| {
                S::of(f64::from(f32::from_le_bytes(
                    c.try_into().expect("4 bytes"),
                )))
            })
            .collect();
        let group = if name.starts_with("head.") {
            ParamGroup::Head
        } else {
            ParamGroup::Backbone
        };
        model
            .params
            .insert(name, Tensor::new(shape, vals)?, group)?;
        next += 4 * n as u64;
    }
    if data_start + next as usize != body.len() {
        return Err(Error::Format(
            "trailing bytes after the data section".into(),
        ));
    }
    Ok((model, header.meta))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn save<S: Scalar>(path: &Path, model: &Model<S>, meta: &CheckpointMeta) -> Result<()> {
    let bytes = to_bytes(model, meta)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: &Path) -> Result<(Model<S>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// The checkpoint's attribute count and cardinalities must equal the
/// corpus vocabulary.
pub fn check_vocab(config: &ModelConfig, vocab: &VocabSpec) -> Result<()> {
    let cards = vocab.cardinalities();
    if cards != config.cardinalities {
        return Err(Error::Schema(format!(
            "checkpoint vocabulary {:?} does not match data vocabulary {:?}",
            config.cardinalities, cards
        )));
    }
    Ok(())
}
