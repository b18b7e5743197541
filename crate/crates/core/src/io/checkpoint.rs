//! Binary checkpoint layout, all integers little-endian `u32`:
//!
//! ```text
//! "CFPN" | version | descriptor length | descriptor (UTF-8) | tensor count
//! per tensor: name length | name (UTF-8) | rank | extents… | f32 payload
//! ```
//!
//! The descriptor is the variant's `key=value;…` string. Per-channel
//! vectors are stored with rank 1, convolution weights with rank 4.

use std::collections::BTreeSet;
use std::path::Path;

use super::{read_file, write_atomic};
use crate::error::{CheckpointError, Result};
use crate::network::{Network, VariantSpec};
use crate::params::ParamKind;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CFPN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn stored_extents(kind: ParamKind, shape: Shape) -> Vec<usize> {
    match kind {
        ParamKind::ConvWeight => shape.to_vec(),
        _ => vec![shape[0]],
    }
}

pub fn encode_checkpoint<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let mut out = Vec::new();
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put(&mut out, CHECKPOINT_VERSION as usize);
    let desc = net.spec().descriptor();
    put(&mut out, desc.len());
    out.extend_from_slice(desc.as_bytes());
    let store = net.store();
    put(&mut out, store.len());
    for (_, entry) in store.iter() {
        put(&mut out, entry.name.len());
        out.extend_from_slice(entry.name.as_bytes());
        let extents = stored_extents(entry.kind, entry.value().shape());
        put(&mut out, extents.len());
        for e in extents {
            put(&mut out, e);
        }
        for v in entry.value().data() {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Rebuilds a network from checkpoint bytes, validating magic, version,
/// descriptor, tensor count, names and extents.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| {
        let mut found = [0u8; 4];
        found[..bytes.len().min(4)].copy_from_slice(&bytes[..bytes.len().min(4)]);
        CheckpointError::BadMagic { found }
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic {
            found: magic.try_into().expect("four bytes"),
        }
        .into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(CheckpointError::UnsupportedVersion(version as u32).into());
    }
    let len = r.u32()?;
    let desc = std::str::from_utf8(r.take(len)?)
        .map_err(|e| CheckpointError::Variant(format!("descriptor is not UTF-8: {e}")))?;
    let spec = VariantSpec::parse(desc).map_err(|e| CheckpointError::Variant(e.to_string()))?;
    let mut net = Network::<T>::new(spec, 0).map_err(|e| CheckpointError::Variant(e.to_string()))?;
    let count = r.u32()?;
    let expected = net.store().len();
    if count != expected {
        return Err(CheckpointError::Structural {
            index: count.min(expected),
            detail: format!("header declares {count} tensors but the variant has {expected}"),
        }
        .into());
    }
    let mut seen = BTreeSet::new();
    for index in 0..count {
        if r.at_end() {
            return Err(CheckpointError::Structural {
                index,
                detail: format!("file ends after {index} of {count} tensors"),
            }
            .into());
        }
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| CheckpointError::Structural {
            index,
            detail: "tensor name is not UTF-8".into(),
        })?;
        let Some(id) = net.store().find(name) else {
            return Err(CheckpointError::Structural {
                index,
                detail: format!("unknown tensor {name:?}"),
            }
            .into());
        };
        if !seen.insert(id) {
            return Err(CheckpointError::Structural {
                index,
                detail: format!("duplicate tensor {name:?}"),
            }
            .into());
        }
        let entry = net.store().entry(id);
        let shape = entry.value().shape();
        let expected = stored_extents(entry.kind, shape);
        let rank = r.u32()?;
        let mut found = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            found.push(r.u32()?);
        }
        if found != expected {
            return Err(CheckpointError::ExtentMismatch {
                name: name.to_string(),
                expected,
                found,
            }
            .into());
        }
        let numel = entry.value().numel();
        let payload = r.take(numel * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        net.store_mut().replace(id, Tensor::from_vec(shape, data)?)?;
    }
    if !r.at_end() {
        return Err(CheckpointError::Structural {
            index: count,
            detail: format!("{} unexpected bytes after the last tensor", bytes.len() - r.pos),
        }
        .into());
    }
    Ok(net)
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(net))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Network<T>> {
    decode_checkpoint(&read_file(path)?)
}
