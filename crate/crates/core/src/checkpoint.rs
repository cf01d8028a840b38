//! Self-describing named-array checkpoint container.
//!
//! Byte layout, all integers and reals little-endian:
//!
//! ```text
//! magic      8 bytes   b"LLCKPT\0\0"
//! version    u32       FORMAT_VERSION
//! meta_len   u64
//! meta       UTF-8 `key = value` lines (training config, epoch, step, ...)
//! n_arrays   u32
//! per array:
//!   name_len u16, name (UTF-8)
//!   dtype    u8        1 = f64
//!   ndim     u8
//!   dims     ndim × u64
//!   data     prod(dims) × f64
//! digest     32 bytes  SHA-256 of everything above
//! ```
//!
//! Arrays are named `param.<tensor>`, `adam.m.<tensor>` and `adam.v.<tensor>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{parameter_layout, ModelParams, NamedTensor};
use crate::optim::AdamState;

pub const MAGIC: &[u8; 8] = b"LLCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

/// Complete training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: AdamState,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Number of completed optimizer steps.
    pub step: u64,
    pub config: TrainConfig,
    /// Mean logged total loss of every completed epoch.
    pub history: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = self.config.to_kv();
        meta.push_str(&format!("format_version = {FORMAT_VERSION}\n"));
        meta.push_str(&format!("epoch = {}\n", self.epoch));
        meta.push_str(&format!("step = {}\n", self.step));
        meta.push_str(&format!("adam_step = {}\n", self.optimizer.step));
        meta.push_str(&format!("model_seed = {}\n", self.params.seed()));
        meta.push_str(&format!("model_width = {}\n", self.params.width()));
        let history: Vec<String> = self.history.iter().map(|v| v.to_string()).collect();
        meta.push_str(&format!("history = {}\n", history.join(",")));

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());

        let tensors = self.params.tensors();
        out.extend_from_slice(&((tensors.len() * 3) as u32).to_le_bytes());
        let mut put = |name: &str, shape: &[usize], data: &[f64]| {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for t in tensors {
            put(&format!("param.{}", t.name), &t.shape, &t.data);
        }
        for (t, m) in tensors.iter().zip(&self.optimizer.m) {
            put(&format!("adam.m.{}", t.name), &t.shape, m);
        }
        for (t, v) in tensors.iter().zip(&self.optimizer.v) {
            put(&format!("adam.v.{}", t.name), &t.shape, v);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(Error::CorruptCheckpoint("missing header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::CorruptCheckpoint("digest mismatch (truncated or modified file)".into()));
        }

        let mut r = Reader { buf: body, pos: 12 };
        let meta_len = r.u64()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::CorruptCheckpoint("metadata is not UTF-8".into()))?;
        let mut config = TrainConfig::default();
        let mut extra = BTreeMap::new();
        for line in meta.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            let (k, v) = (k.trim(), v.trim());
            if crate::config::KEYS.contains(&k) {
                config.set(k, v)?;
            } else {
                extra.insert(k.to_string(), v.to_string());
            }
        }
        let field = |k: &str| -> Result<&str> {
            extra
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("metadata lacks {k}")))
        };
        let num = |k: &str| -> Result<u64> {
            field(k)?
                .parse()
                .map_err(|_| Error::CorruptCheckpoint(format!("bad metadata value for {k}")))
        };
        let epoch = num("epoch")? as usize;
        let step = num("step")?;
        let adam_step = num("adam_step")?;
        let model_seed = num("model_seed")?;
        let width = num("model_width")? as usize;
        let history = field("history")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::CorruptCheckpoint("bad history".into()))?;
        if width != config.width {
            return Err(Error::CorruptCheckpoint(format!(
                "model width {width} disagrees with config width {}",
                config.width
            )));
        }

        let n_arrays = r.u32()? as usize;
        let mut arrays = BTreeMap::new();
        for _ in 0..n_arrays {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::CorruptCheckpoint("array name is not UTF-8".into()))?;
            if r.u8()? != DTYPE_F64 {
                return Err(Error::CorruptCheckpoint(format!("{name}: unsupported dtype")));
            }
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.insert(name, (shape, data));
        }
        if r.pos != body.len() {
            return Err(Error::CorruptCheckpoint("trailing bytes".into()));
        }

        let layout = parameter_layout(width);
        let mut tensors = Vec::with_capacity(layout.len());
        let mut m = Vec::with_capacity(layout.len());
        let mut v = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            let mut fetch = |prefix: &str| -> Result<Vec<f64>> {
                let key = format!("{prefix}{name}");
                let (s, d) = arrays
                    .remove(&key)
                    .ok_or_else(|| Error::shape("checkpoint array", &key, "missing"))?;
                if s != *shape {
                    return Err(Error::shape("checkpoint array", format!("{key} {shape:?}"), format!("{s:?}")));
                }
                Ok(d)
            };
            tensors.push(NamedTensor {
                name: name.clone(),
                shape: shape.clone(),
                data: fetch("param.")?,
            });
            m.push(fetch("adam.m.")?);
            v.push(fetch("adam.v.")?);
        }
        if let Some(name) = arrays.keys().next() {
            return Err(Error::shape("checkpoint array", "declared architecture", format!("unexpected {name}")));
        }
        let params = ModelParams::from_tensors(width, model_seed, config.noise_head_activation, tensors)?;
        Ok(Checkpoint {
            params,
            optimizer: AdamState { step: adam_step, m, v },
            epoch,
            step,
            config,
            history,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptCheckpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Write atomically (temporary file, then rename).
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("bin.tmp");
    fs::write(&tmp, ckpt.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Load and require a specific model width.
pub fn load_checkpoint_with_width(path: &Path, width: usize) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.params.width() != width {
        return Err(Error::shape(
            "checkpoint width",
            width,
            ckpt.params.width(),
        ));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn sample() -> Checkpoint {
        let params = init_model(4, 8).unwrap();
        let mut opt = AdamState::new(params.tensors().iter().map(|t| t.data.len()));
        opt.step = 7;
        opt.m[3][5] = 0.125;
        opt.v[0][0] = 1e-300;
        let config = TrainConfig {
            width: 8,
            seed: 4,
            ..Default::default()
        };
        Checkpoint {
            params,
            optimizer: opt,
            epoch: 3,
            step: 7,
            config,
            history: vec![0.5, 0.25, 0.1 + 0.2],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ckpt_epoch3.bin");
        save_checkpoint(&ck, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.tensors().iter().zip(ck.params.tensors()) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = sample().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 20] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::CorruptCheckpoint(_))
            ));
        }
    }

    #[test]
    fn flipped_byte_is_corrupt() {
        let mut bytes = sample().to_bytes();
        let i = bytes.len() / 3;
        bytes[i] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        save_checkpoint(&sample(), &p).unwrap();
        assert!(matches!(
            load_checkpoint_with_width(&p, 16),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(load_checkpoint_with_width(&p, 8).is_ok());
    }
}
