//! Binary weight checkpoints.
//!
//! Layout, little-endian throughout: magic `FRWT`, `u32` version, `u32`
//! tensor count, then per tensor a `u32` name length, the UTF-8 name, a
//! `u32` rank, `rank` × `u32` dims and the `f32` values. A tensor named
//! `meta.arch` holds `[base_channels, resblocks_per_stage, image_channels]`
//! so the network can be rebuilt before the parameters are filled in.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{FusionConfig, FusionMode, FusionWeights};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FRWT";
pub const CHECKPOINT_VERSION: u32 = 1;
const ARCH: &str = "meta.arch";

/// Serializes the parameters (not the optimizer state).
pub fn write_weights(weights: &FusionWeights, out: &mut impl Write) -> std::io::Result<()> {
    let params = weights.store().params();
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32 + 1).to_le_bytes())?;
    let cfg = weights.config();
    let arch = [
        cfg.base_channels as f32,
        cfg.resblocks_per_stage as f32,
        weights.channels() as f32,
    ];
    write_tensor(out, ARCH, &[3], &arch)?;
    for p in params {
        write_tensor(out, &p.name, &p.shape, p.value.data())?;
    }
    Ok(())
}

fn write_tensor(out: &mut impl Write, name: &str, shape: &[usize], data: &[f32]) -> std::io::Result<()> {
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn save_weights(weights: &FusionWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    write_weights(weights, &mut bytes).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a checkpoint and rebuilds the network it describes.
pub fn read_weights(input: &mut impl Read) -> Result<FusionWeights> {
    let mut buf = Vec::new();
    input
        .read_to_end(&mut buf)
        .map_err(|e| Error::Format(format!("cannot read checkpoint: {e}")))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a weight checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` too large")))?;
        let bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if tensors.insert(name.clone(), (dims, data)).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }

    let (_, arch) = tensors
        .remove(ARCH)
        .ok_or_else(|| Error::WeightShape(format!("missing `{ARCH}` tensor")))?;
    let [base, blocks, channels] = arch[..] else {
        return Err(Error::WeightShape(format!("`{ARCH}` must hold 3 values")));
    };
    let config = FusionConfig {
        mode: FusionMode::Learned,
        base_channels: base as usize,
        resblocks_per_stage: blocks as usize,
    };
    let mut weights = FusionWeights::zeros(&config, channels as usize)?;
    for p in weights.store_mut().params_mut() {
        let (dims, data) = tensors
            .remove(&p.name)
            .ok_or_else(|| Error::WeightShape(format!("missing tensor `{}`", p.name)))?;
        if dims != p.shape {
            return Err(Error::WeightShape(format!(
                "`{}` has shape {dims:?}, expected {:?}",
                p.name, p.shape
            )));
        }
        p.value.data_mut().copy_from_slice(&data);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::WeightShape(format!("unexpected tensor `{extra}`")));
    }
    Ok(weights)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<FusionWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&mut bytes.as_slice())
}
