//! Checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "RDCK"  u32 version=1
//! u32 meta_len, meta_len bytes of UTF-8 JSON (CheckpointMeta)
//! u32 n_tensors, then per tensor:
//!   u32 name_len, name bytes, u32 ndim, ndim x u32 dims, prod(dims) x f32
//! ```
//!
//! Tensor names are `param/<name>`, `adam_m/<name>` and `adam_v/<name>`.

use std::fs;
use std::path::Path;

use rawdiff_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{bail, Error, Result};

pub const MAGIC: &[u8; 4] = b"RDCK";
pub const VERSION: u32 = 1;
const MAX_NDIM: usize = 8;
const MAX_NAME: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Completed optimizer steps.
    pub step: usize,
    pub rng_seed: [u8; 32],
    /// ChaCha word position, as a decimal string (u128).
    pub rng_word_pos: String,
    pub adam_t: u64,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    /// Tensors under `prefix/`, with the prefix stripped.
    pub fn group(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        let pre = format!("{prefix}/");
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(&pre).map(|s| (s.to_string(), t.clone())))
            .collect()
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&ck.meta).map_err(|e| Error::Data(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(ck.tensors.len() as u32).to_le_bytes());
    for (name, t) in &ck.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            bail!(Data, "checkpoint truncated at byte {}", self.pos);
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        bail!(Data, "not a checkpoint (bad magic)");
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!(Data, "unsupported checkpoint version {version}");
    }
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Data(format!("checkpoint metadata: {e}")))?;
    meta.rng_word_pos
        .parse::<u128>()
        .map_err(|_| Error::Data("checkpoint rng_word_pos is not an integer".into()))?;
    let n = r.u32()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..n {
        let name_len = r.u32()? as usize;
        if name_len > MAX_NAME {
            bail!(Data, "checkpoint tensor name of {name_len} bytes");
        }
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Data("checkpoint tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        if ndim > MAX_NDIM {
            bail!(Data, "tensor {name} has {ndim} dimensions");
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut numel: usize = 1;
        for _ in 0..ndim {
            let d = r.u32()? as usize;
            numel = numel
                .checked_mul(d)
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Data(format!("tensor {name} is larger than the file")))?;
            shape.push(d);
        }
        let raw = r.take(numel * 4)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
        if tensors.iter().any(|(n, _): &(String, Tensor<f32>)| *n == name) {
            bail!(Data, "duplicate checkpoint tensor {name}");
        }
        tensors.push((name, Tensor::from_vec(&shape, data)));
    }
    if r.remaining() != 0 {
        bail!(Data, "{} trailing bytes after checkpoint", r.remaining());
    }
    Ok(Checkpoint { meta, tensors })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                step: 12,
                rng_seed: [7; 32],
                rng_word_pos: "123456789012345678901234567890".into(),
                adam_t: 12,
                config: RunConfig::default(),
            },
            tensors: vec![
                ("param/a".into(), Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-7, 9.0])),
                ("param/b".into(), Tensor::from_vec(&[1], vec![f32::MIN_POSITIVE])),
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        assert_eq!(decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap(), ck);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        assert!(decode_checkpoint(&[]).is_err());
    }

    #[test]
    fn groups_strip_prefix() {
        let g = sample().group("param");
        assert_eq!(g[0].0, "a");
        assert_eq!(g.len(), 2);
    }
}
